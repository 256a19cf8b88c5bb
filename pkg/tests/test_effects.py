import numpy as np
import pytest
from scipy import stats as ss

from xp.causal import (AnalysisSpec, average_treatment_effect, bootstrap_variance,
                       conditional_ate, dynamic_te, fit, predict_potential,
                       summary_statistics, welch_ttest)
from xp.causal.base import model_data
from xp.compress import compress
from xp.errors import CapabilityError, SupportError, ValidationError
from xp.predicate import clause
from xp.table import ColumnarTable


def spec_for(covariates=(), **kw):
    return AnalysisSpec(metric="y", treatment_column="cell", control="control",
                        treatment="treatment", covariates=tuple(covariates), **kw)


def two_cell_table(yc, yt):
    return ColumnarTable.from_dict("t", {
        "cell": ["control"] * len(yc) + ["treatment"] * len(yt),
        "y": list(yc) + list(yt),
    })


def synth(rng, n=4000, ate=0.5, sigma=1.0, n_countries=4, country_scale=1.0):
    countries = [f"c{i}" for i in rng.integers(0, n_countries, n)]
    cells = ["treatment" if v else "control" for v in rng.integers(0, 2, n)]
    c_eff = {f"c{i}": country_scale * i for i in range(n_countries)}
    y = (1.0 + ate * (np.array(cells) == "treatment")
         + np.array([c_eff[c] for c in countries]) + rng.normal(0, sigma, n))
    return ColumnarTable.from_dict("t", {"cell": cells, "country": countries,
                                         "y": y.tolist()})


def test_ate_welch_hand_example():
    e = average_treatment_effect("t-test", spec_for(), two_cell_table([1, 2, 3], [3, 4, 5]))
    assert e.estimate == pytest.approx(2.0, rel=1e-12)
    assert e.variance == pytest.approx(2 / 3, rel=1e-12)
    want = welch_ttest([1.0, 2.0, 3.0], [3.0, 4.0, 5.0])
    assert e.p_value == pytest.approx(want.p_value, rel=1e-12)


def test_aa_identity():
    e = average_treatment_effect("t-test", spec_for(), two_cell_table([1, 2, 3], [1, 2, 3]))
    assert e.estimate == 0.0
    assert e.p_value == 1.0


def test_ate_recovers_truth_and_generic_equals_shortcut(rng):
    t = synth(rng, n=20_000, ate=0.5, country_scale=0.8)
    spec = spec_for(covariates=["country"])
    generic = average_treatment_effect("ols", spec, t)
    shortcut = average_treatment_effect("ols", spec, t, strategy="specialized")
    assert shortcut.estimate == pytest.approx(generic.estimate, rel=1e-9)
    se = np.sqrt(generic.variance)
    assert abs(generic.estimate - 0.5) < 3 * se


def test_generic_equals_shortcut_all_models(rng):
    for _ in range(20):
        n = int(rng.integers(200, 800))
        t = synth(rng, n=n, ate=rng.normal(), country_scale=rng.uniform(0, 2))
        for kind in ("t-test", "ols"):
            spec = spec_for(covariates=["country"] if kind == "ols" else ())
            g = average_treatment_effect(kind, spec, t)
            s = average_treatment_effect(kind, spec, t, strategy="specialized")
            assert s.estimate == pytest.approx(g.estimate, rel=1e-9, abs=1e-12)
            assert s.p_value == pytest.approx(g.p_value, rel=1e-9, abs=1e-12)
        # proportion test on a thresholded metric
        y = t.column("y").data
        tb = ColumnarTable.from_dict("tb", {
            "cell": t.column("cell").decoded().tolist(),
            "y": (y > np.median(y)).astype(float).tolist(),
        })
        g = average_treatment_effect("proportion-test", spec_for(), tb)
        s = average_treatment_effect("proportion-test", spec_for(), tb,
                                     strategy="specialized")
        assert s.estimate == pytest.approx(g.estimate, rel=1e-9, abs=1e-12)


def test_ate_compressed_equals_raw(rng):
    t = synth(rng, n=6000)
    c = compress(t, ["y"], "cell", ["country"])
    spec = spec_for(covariates=["country"])
    raw = average_treatment_effect("ols", spec, t)
    packed = average_treatment_effect("ols", spec, c)
    assert packed.estimate == pytest.approx(raw.estimate, rel=1e-9)
    assert packed.variance == pytest.approx(raw.variance, rel=1e-9)
    assert packed.p_value == pytest.approx(raw.p_value, rel=1e-9)


def test_predict_potential_constant_model():
    t = two_cell_table([1.0, 2.0, 3.0], [3.0, 4.0, 5.0])
    spec = spec_for()
    fitted = fit(spec, t, "ols")
    p1 = predict_potential("ols", fitted, t, spec, 1)
    p0 = predict_potential("ols", fitted, t, spec, 0)
    assert np.allclose(p1, 4.0)
    assert np.allclose(p0, 2.0)


def test_predict_potential_covariate_offsets(rng):
    t = synth(rng, n=2000)
    spec = spec_for(covariates=["country"])
    fitted = fit(spec, t, "ols")
    mdata = model_data(spec, t)
    p1 = predict_potential("ols", fitted, mdata, spec, 1)
    beta = dict(zip(fitted.coefficients, fitted.beta))
    codes, levels = mdata.covariates["country"]
    for i in (0, 17, 991):
        want = beta["intercept"] + beta[f"treat[{spec.treatment}]"]
        level = levels[codes[i]]
        want += beta.get(f"country={level}", 0.0)
        assert p1[i] == pytest.approx(want, rel=1e-12)


def test_predict_group_averages_equal_expansion_oracle(rng):
    t = synth(rng, n=3000)
    spec = spec_for(covariates=["country"])
    c = compress(t, ["y"], "cell", ["country"])
    fitted = fit(spec, c, "ols")
    mdata = model_data(spec, c)
    raw_mdata = model_data(spec, t)
    for x in (0, 1):
        packed = predict_potential("ols", fitted, mdata, spec, x)
        raw = predict_potential("ols", fitted, raw_mdata, spec, x)
        packed_avg = float(np.dot(mdata.weights, packed) / mdata.weights.sum())
        assert packed_avg == pytest.approx(float(raw.mean()), rel=1e-9)


def test_cate_saturated_equals_subset_refit(rng):
    t = synth(rng, n=9000, n_countries=3)
    spec = spec_for(covariates=["country"], interactions=["country"])
    for value in ("c0", "c1", "c2"):
        cate = conditional_ate("ols", spec, t, clause("country", "eq", value))
        # oracle: plain ATE refit on the subset
        mask = t.column("country").decoded() == value
        sub = t.take(np.flatnonzero(mask))
        refit = average_treatment_effect("ols", spec_for(), sub)
        assert cate.estimate == pytest.approx(refit.estimate, rel=1e-9)
        assert cate.kind == "cate"


def test_cate_whole_population_equals_ate(rng):
    t = synth(rng, n=3000)
    spec = spec_for(covariates=["country"])
    cate = conditional_ate("ols", spec, t, clause("country", "in",
                                                  ["c0", "c1", "c2", "c3"]))
    ate = average_treatment_effect("ols", spec, t)
    assert cate.estimate == pytest.approx(ate.estimate, rel=1e-12)
    assert cate.variance == pytest.approx(ate.variance, rel=1e-12)


def test_cate_empty_segment_errors(rng):
    t = synth(rng, n=500)
    spec = spec_for(covariates=["country"])
    with pytest.raises(SupportError):
        conditional_ate("ols", spec, t, clause("country", "eq", "nowhere"))


def panel_table(rng, effects, n_per_day=3000, sigma=1.0):
    rows_cell, rows_y, rows_ts = [], [], []
    day = 86400
    for d, eff in enumerate(effects):
        cells = rng.integers(0, 2, n_per_day)
        y = 1.0 + eff * cells + rng.normal(0, sigma, n_per_day)
        rows_cell += ["treatment" if v else "control" for v in cells]
        rows_y += y.tolist()
        rows_ts += [d * day + 30] * n_per_day
    from xp.table import ColumnType
    t = ColumnarTable.from_dict("panel", {"cell": rows_cell, "y": rows_y})
    ts = ColumnarTable.from_dict("ts", {"ts": rows_ts}, schema={"ts": ColumnType.TIMESTAMP})
    return t.with_columns(ts.columns)


def test_dte_recovers_per_day_effects(rng):
    t = panel_table(rng, [1.0, 3.0])
    spec = spec_for(time_column="ts")
    effects = dynamic_te("ols", spec, t)
    assert len(effects) == 2
    for eff, truth in zip(effects, [1.0, 3.0]):
        assert abs(eff.estimate - truth) < 3 * np.sqrt(eff.variance)
        assert eff.kind == "dte"
    assert effects[0].label == "1970-01-01"


def test_dte_single_bucket_equals_ate(rng):
    t = panel_table(rng, [2.0], n_per_day=1000)
    spec = spec_for(time_column="ts")
    effects = dynamic_te("ols", spec, t)
    ate = average_treatment_effect("ols", spec_for(), t)
    assert len(effects) == 1
    assert effects[0].estimate == pytest.approx(ate.estimate, rel=1e-12)
    assert effects[0].variance == pytest.approx(ate.variance, rel=1e-12)


def test_dte_constant_effect_matches_pooled(rng):
    t = panel_table(rng, [1.5, 1.5, 1.5])
    spec = spec_for(time_column="ts")
    pooled = average_treatment_effect("ols", spec_for(), t)
    for eff in dynamic_te("ols", spec, t):
        assert abs(eff.estimate - pooled.estimate) < 3 * np.sqrt(eff.variance)


def test_dte_unpopulated_bucket_skipped(rng):
    t = panel_table(rng, [1.0, 2.0], n_per_day=400)
    spec = spec_for(time_column="ts")
    effects = dynamic_te("ols", spec, t, buckets=[0, 1, 99])
    assert len(effects) == 2
    with pytest.raises(SupportError):
        dynamic_te("ols", spec, t, buckets=[99])


def test_dte_compressed_equals_raw(rng):
    t = panel_table(rng, [1.0, 2.0], n_per_day=2000)
    c = compress(t, ["y"], "cell", [], time="ts")
    spec = spec_for(time_column="ts")
    raw = dynamic_te("ols", spec, t)
    packed = dynamic_te("ols", spec, c)
    for r, p in zip(raw, packed):
        assert p.estimate == pytest.approx(r.estimate, rel=1e-9)
        assert p.variance == pytest.approx(r.variance, rel=1e-9)


def test_bootstrap_close_to_welch_analytic(rng):
    t = two_cell_table(rng.normal(0, 1, 1000).tolist(),
                       rng.normal(0.3, 1.2, 1000).tolist())
    spec = spec_for()
    variance, ci = bootstrap_variance("t-test", spec, t, b=800, seed=11)
    welch = average_treatment_effect("t-test", spec, t)
    assert variance == pytest.approx(welch.variance, rel=0.15)
    assert ci[0] < welch.estimate < ci[1]


def test_bootstrap_deterministic_and_parallel_identical(rng):
    t = two_cell_table(rng.normal(0, 1, 400).tolist(),
                       rng.normal(0.3, 1, 400).tolist())
    spec = spec_for()
    serial = bootstrap_variance("t-test", spec, t, b=200, seed=5)
    again = bootstrap_variance("t-test", spec, t, b=200, seed=5)
    parallel = bootstrap_variance("t-test", spec, t, b=200, seed=5, workers=4)
    assert serial == again
    assert serial == parallel


def test_bootstrap_zero_variance_data():
    t = two_cell_table([2.0] * 50, [2.0] * 60)
    variance, ci = bootstrap_variance("t-test", spec_for(), t, b=150, seed=1)
    assert variance == 0.0
    assert ci == (0.0, 0.0)


def test_bootstrap_compressed_multinomial(rng):
    t = synth(rng, n=3000)
    c = compress(t, ["y"], "cell", ["country"])
    spec = spec_for(covariates=["country"])
    v_raw, _ = bootstrap_variance("ols", spec, t, b=400, seed=3)
    analytic = average_treatment_effect("ols", spec, t).variance
    assert v_raw == pytest.approx(analytic, rel=0.25)
    # group-count resampling cannot recreate within-group dispersion, so the
    # compressed variance only reflects composition noise (documented limit)
    v_packed, _ = bootstrap_variance("ols", spec, c, b=400, seed=3)
    assert 0.0 < v_packed < analytic
    again, _ = bootstrap_variance("ols", spec, c, b=400, seed=3)
    assert v_packed == again


def test_bootstrap_compressed_rejects_unit_level_models(rng):
    t = synth(rng, n=400)
    c = compress(t, ["y"], "cell", ["country"])
    spec = spec_for(covariates=["country"])

    class FakeQuantileModel:
        name = "fake-quantile"
        moments_only_estimate = False

    from xp.causal.base import register_model
    register_model("fake-quantile", FakeQuantileModel())
    with pytest.raises(CapabilityError):
        bootstrap_variance("fake-quantile", spec, c, b=200, seed=1)


def test_bootstrap_b_floor(rng):
    t = two_cell_table([1.0, 2.0], [3.0, 4.0])
    with pytest.raises(ValidationError):
        bootstrap_variance("t-test", spec_for(), t, b=50, seed=1)


def test_summary_statistics_basic():
    t = two_cell_table([1.0, 2.0, 3.0], [4.0, 6.0])
    s = summary_statistics(t, spec_for())
    control = s.cells["control"]
    assert control.count == 3
    assert control.mean == 2.0
    assert control.quantiles[1] == 2.0  # median
    assert control.minimum == 1.0 and control.maximum == 3.0
    assert s.cells["treatment"].mean == 5.0


def test_summary_statistics_compressed_capability(rng):
    t = synth(rng, n=500)
    c = compress(t, ["y"], "cell", ["country"])
    spec = spec_for(covariates=["country"])
    with pytest.raises(CapabilityError):
        summary_statistics(c, spec)
    s = summary_statistics(c, spec, include_quantiles=False)
    raw = summary_statistics(t, spec)
    for cell in ("control", "treatment"):
        assert s.cells[cell].count == raw.cells[cell].count
        assert s.cells[cell].mean == pytest.approx(raw.cells[cell].mean, rel=1e-12)
        assert s.cells[cell].variance == pytest.approx(raw.cells[cell].variance, rel=1e-9)
        assert s.cells[cell].quantiles is None


def test_summary_matches_sort_oracle(rng):
    yc = rng.normal(size=501)
    yt = rng.normal(size=400)
    s = summary_statistics(two_cell_table(yc.tolist(), yt.tolist()), spec_for())
    for label, values in (("control", yc), ("treatment", yt)):
        cell = s.cells[label]
        assert cell.mean == pytest.approx(values.mean(), rel=1e-12)
        assert cell.variance == pytest.approx(values.var(ddof=1), rel=1e-9)
        for q, got in zip((0.25, 0.5, 0.75, 0.95), cell.quantiles):
            assert got == pytest.approx(np.percentile(values, q * 100, method="midpoint"),
                                        rel=1e-12)


def test_ttest_equals_ols_single_regressor(rng):
    from xp.causal import pooled_ttest
    for _ in range(10):
        yc = rng.normal(0, 1, int(rng.integers(20, 200)))
        yt = rng.normal(0.2, 1, int(rng.integers(20, 200)))
        t = two_cell_table(yc.tolist(), yt.tolist())
        pooled = pooled_ttest(yc, yt)
        ols = average_treatment_effect("ols", spec_for(), t)
        assert ols.estimate == pytest.approx(pooled.estimate, rel=1e-9)
        assert ols.p_value == pytest.approx(pooled.p_value, rel=1e-9)
