import numpy as np
import pytest
from scipy import stats as ss

from xp.causal.distributions import (incomplete_beta, normal_cdf, normal_ppf,
                                     normal_two_sided_p, student_t_cdf,
                                     student_t_ppf, student_t_two_sided_p)


def test_normal_cdf_vs_scipy(rng):
    xs = np.concatenate([rng.normal(size=300) * 3, [-8.0, -5.0, 0.0, 5.0, 8.0]])
    for x in xs:
        assert abs(normal_cdf(x) - ss.norm.cdf(x)) < 1e-14


def test_normal_ppf_vs_scipy(rng):
    for p in np.concatenate([rng.uniform(1e-12, 1 - 1e-12, 300), [0.025, 0.5, 0.975]]):
        assert abs(normal_ppf(p) - ss.norm.ppf(p)) < 1e-12 * max(1, abs(ss.norm.ppf(p)))


def test_normal_ppf_roundtrip(rng):
    for p in rng.uniform(1e-9, 1 - 1e-9, 100):
        assert abs(normal_cdf(normal_ppf(p)) - p) < 1e-13


def test_normal_ppf_domain():
    for p in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            normal_ppf(p)


def test_incomplete_beta_vs_scipy(rng):
    for a in [0.5, 1.0, 3.5, 50.0, 2000.0]:
        for b in [0.5, 1.0, 3.5, 50.0, 2000.0]:
            for x in rng.uniform(0.001, 0.999, 40):
                assert abs(incomplete_beta(a, b, x) - ss.beta.cdf(x, a, b)) < 1e-13


def test_t_cdf_vs_scipy(rng):
    dfs = [1, 2, 3, 4.7, 10, 30, 100, 1000, 1e5, 1e6]
    ts = np.concatenate([rng.normal(size=200) * 4, [-30, -10, 1e-4, 10, 30]])
    for df in dfs:
        for t in ts:
            assert abs(student_t_cdf(t, df) - ss.t.cdf(t, df)) < 1e-12


def test_t_two_sided_p_vs_scipy(rng):
    for df in [3, 10, 100, 1e4, 1e6]:
        for t in rng.normal(size=100) * 3:
            want = 2 * ss.t.sf(abs(t), df)
            assert abs(student_t_two_sided_p(t, df) - want) < 1e-12
    assert student_t_two_sided_p(0.0, 5) == 1.0


def test_t_ppf_vs_scipy(rng):
    for df in [2, 4, 10, 100, 5000]:
        for p in np.concatenate([rng.uniform(1e-9, 1 - 1e-9, 100), [0.5]]):
            want = ss.t.ppf(p, df)
            assert abs(student_t_ppf(p, df) - want) <= 1e-10 * max(1.0, abs(want))


def test_t_ppf_roundtrip(rng):
    for df in [3, 17, 240]:
        for p in rng.uniform(1e-6, 1 - 1e-6, 50):
            assert abs(student_t_cdf(student_t_ppf(p, df), df) - p) < 1e-12


def test_two_sided_p_symmetry(rng):
    for t in rng.normal(size=50) * 2:
        assert student_t_two_sided_p(t, 7) == pytest.approx(
            student_t_two_sided_p(-t, 7), abs=1e-15)
        assert normal_two_sided_p(t) == pytest.approx(normal_two_sided_p(-t), abs=1e-15)
