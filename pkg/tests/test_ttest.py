import numpy as np
import pytest
from scipy import stats as ss

from xp.causal import pooled_ttest, two_proportion_test, welch_ttest
from xp.errors import ValidationError


def test_welch_hand_example():
    # [1,2,3] vs [3,4,5]: both cells have s^2 = 1, so se = sqrt(2/3) and the
    # Welch-Satterthwaite df collapses to 4.
    e = welch_ttest([1.0, 2.0, 3.0], [3.0, 4.0, 5.0])
    assert e.estimate == 2.0
    assert e.variance == pytest.approx(2.0 / 3.0, rel=1e-12)
    assert np.sqrt(e.variance) == pytest.approx(0.8165, abs=5e-5)
    assert e.extras["df"] == pytest.approx(4.0, rel=1e-12)
    want = ss.ttest_ind([1, 2, 3], [3, 4, 5], equal_var=False)
    assert e.p_value == pytest.approx(want.pvalue, rel=1e-10)
    assert e.p_value == pytest.approx(0.0707, abs=5e-4)


def test_welch_equal_cells():
    e = welch_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert e.estimate == 0.0
    assert e.p_value == 1.0


def test_welch_accepts_moments():
    sample_c, sample_t = [1.0, 2.0, 3.0, 7.0], [2.0, 2.5, 9.0]
    from_samples = welch_ttest(sample_c, sample_t)
    mc, mt = np.mean(sample_c), np.mean(sample_t)
    moments_c = (4, mc, float(((np.array(sample_c) - mc) ** 2).sum()))
    moments_t = (3, mt, float(((np.array(sample_t) - mt) ** 2).sum()))
    from_moments = welch_ttest(moments_c, moments_t)
    assert from_samples.estimate == pytest.approx(from_moments.estimate, rel=1e-12)
    assert from_samples.p_value == pytest.approx(from_moments.p_value, rel=1e-12)


def test_welch_matches_scipy_randomized(rng):
    for _ in range(25):
        a = rng.normal(size=rng.integers(5, 60))
        b = rng.normal(loc=0.3, size=rng.integers(5, 60))
        e = welch_ttest(a, b)
        want = ss.ttest_ind(a, b, equal_var=False)
        assert e.estimate == pytest.approx(b.mean() - a.mean(), rel=1e-12)
        assert e.p_value == pytest.approx(want.pvalue, rel=1e-9)


def test_pooled_matches_scipy_randomized(rng):
    for _ in range(25):
        a = rng.normal(size=rng.integers(5, 60))
        b = rng.normal(loc=0.3, size=rng.integers(5, 60))
        e = pooled_ttest(a, b)
        want = ss.ttest_ind(a, b, equal_var=True)
        assert e.p_value == pytest.approx(want.pvalue, rel=1e-9)


def test_small_cells_rejected():
    with pytest.raises(ValidationError):
        welch_ttest([1.0], [2.0, 3.0])
    with pytest.raises(ValidationError):
        pooled_ttest([1.0, 2.0], [3.0])


def test_ci_covers_estimate(rng):
    a = rng.normal(size=40)
    b = rng.normal(loc=0.5, size=35)
    e = welch_ttest(a, b, ci_level=0.9)
    assert e.ci_low <= e.estimate <= e.ci_high


def test_proportion_hand_example():
    # 50/100 vs 60/100: pooled p = 0.55, se = sqrt(0.55*0.45*0.02) ~ 0.07036
    e = two_proportion_test(50, 100, 60, 100)
    assert e.estimate == pytest.approx(0.10, rel=1e-12)
    z = 0.10 / np.sqrt(0.55 * 0.45 * 0.02)
    assert z == pytest.approx(1.4213, abs=5e-5)
    assert e.p_value == pytest.approx(2 * ss.norm.sf(z), rel=1e-10)
    assert e.p_value == pytest.approx(0.1552, abs=5e-5)


def test_proportion_identical():
    e = two_proportion_test(30, 100, 30, 100)
    assert e.estimate == 0.0
    assert e.p_value == 1.0


def test_proportion_extreme():
    e = two_proportion_test(0, 10, 10, 10)
    assert e.estimate == 1.0
    assert e.p_value < 1e-5


def test_proportion_degenerate_pool():
    assert two_proportion_test(0, 10, 0, 10).p_value == 1.0
    assert two_proportion_test(10, 10, 10, 10).p_value == 1.0


def test_proportion_bad_inputs():
    with pytest.raises(ValidationError):
        two_proportion_test(5, 0, 1, 10)
    with pytest.raises(ValidationError):
        two_proportion_test(11, 10, 1, 10)
