"""Generic treatment-effect computation over the two-method model interface.

Every registered model provides train and predict; this module implements
the shared procedure: train, copy the dataset with treatment forced on,
copy with treatment forced off, predict both, average the predictions
(weighted by group counts on compressed data), and difference the
averages. Conditional effects restrict the averaging to a covariate
segment; per-bucket effects force the time column to one bucket.
Specialized model shortcuts exist for speed but must agree with this path.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import SupportError, ValidationError
from ..predicate import Predicate
from .base import (AnalysisSpec, FittedModel, ModelData, TreatmentEffect,
                   bucket_label, model_data, register_model, resolve_model)
from .bootstrap import bootstrap_variance
from .distributions import (normal_ppf, normal_two_sided_p, student_t_ppf,
                            student_t_two_sided_p)
from .ols import OlsModel
from .ttest import ProportionModel, TTestModel

register_model("t-test", TTestModel())
register_model("ols", OlsModel())
register_model("proportion-test", ProportionModel())
register_model("descriptive", None)  # summaries only; no effect computation


def fit(spec: AnalysisSpec, data, model_kind: str) -> FittedModel:
    model = resolve_model(model_kind)
    mdata = data if isinstance(data, ModelData) else model_data(spec, data)
    return model.train(spec, mdata)


def predict_potential(model_kind: str, fitted: FittedModel, data, spec: AnalysisSpec,
                      x: int) -> np.ndarray:
    """Predictions on a copy of the dataset with treatment forced to ``x``."""
    model = resolve_model(model_kind)
    mdata = data if isinstance(data, ModelData) else model_data(spec, data)
    return model.predict(fitted, mdata.with_treatment(x))


def generic_estimate(model, fitted: FittedModel, mdata: ModelData,
                     mask: np.ndarray | None = None,
                     time_override: int | None = None) -> float:
    """Steps 2-6: two forced copies, predict, weighted-average, difference."""
    treated_copy = mdata.with_treatment(1)
    untreated_copy = mdata.with_treatment(0)
    pred1 = model.predict(fitted, treated_copy, time_override)
    pred0 = model.predict(fitted, untreated_copy, time_override)
    w = mdata.weights if mask is None else mdata.weights * mask
    total = w.sum()
    if total <= 0:
        raise SupportError("no rows to average predictions over")
    return float(np.dot(w, pred1) / total - np.dot(w, pred0) / total)


def _effect_from_parts(model, fitted: FittedModel, spec: AnalysisSpec, estimate: float,
                       variance: float, kind: str, label: str | None,
                       n_control: int, n_treatment: int,
                       extras: dict | None = None) -> TreatmentEffect:
    level = spec.ci_level
    ref, df = model.reference_distribution(fitted)
    if variance < 0:
        variance = 0.0
    se = math.sqrt(variance)
    if se == 0.0:
        p = 1.0 if estimate == 0.0 else 0.0
        half = 0.0
    elif ref == "t":
        p = min(student_t_two_sided_p(estimate / se, df), 1.0)
        half = student_t_ppf(0.5 + level / 2.0, df) * se
    else:
        p = min(normal_two_sided_p(estimate / se), 1.0)
        half = normal_ppf(0.5 + level / 2.0) * se
    if isinstance(model, ProportionModel):
        p = model.p_value(fitted, None)  # pooled-variance z, per the standalone test
    all_extras = {"df": df} if ref == "t" else {}
    if extras:
        all_extras.update(extras)
    return TreatmentEffect(
        kind=kind, estimate=estimate, variance=variance,
        ci_low=estimate - half, ci_high=estimate + half, ci_level=level,
        p_value=p, method=model.name, n_control=n_control, n_treatment=n_treatment,
        label=label, extras=all_extras)


def _variance(model, fitted, spec, mdata, mask=None, time_override=None,
              seed: int | None = None) -> float:
    if spec.option("variance") == "bootstrap":
        variance, _ = bootstrap_variance(
            model.name, spec, mdata, int(spec.option("bootstrap_b")),
            seed if seed is not None else int(spec.option("seed", 0)))
        return variance
    return model.ate_variance(fitted, mdata, mask, time_override)


def average_treatment_effect(model_kind: str, spec: AnalysisSpec, data,
                             strategy: str = "generic") -> TreatmentEffect:
    """Expected global difference between full-treatment and full-control."""
    model = resolve_model(model_kind)
    mdata = data if isinstance(data, ModelData) else model_data(spec, data)
    fitted = model.train(spec, mdata)
    if strategy == "specialized":
        estimate = getattr(model, "ate_shortcut", lambda *a: None)(fitted, mdata)
        if estimate is None:
            estimate = generic_estimate(model, fitted, mdata)
    else:
        estimate = generic_estimate(model, fitted, mdata)
    variance = _variance(model, fitted, spec, mdata)
    return _effect_from_parts(model, fitted, spec, estimate, variance, "ate", None,
                              mdata.n_control, mdata.n_treatment)


def conditional_ate(model_kind: str, spec: AnalysisSpec, data,
                    segment: Predicate, label: str | None = None) -> TreatmentEffect:
    """Treatment effect for the subpopulation matching a covariate segment."""
    model = resolve_model(model_kind)
    mdata = data if isinstance(data, ModelData) else model_data(spec, data)
    mask = mdata.segment_mask(segment)
    n_control = int(mdata.weights[mask & ~mdata.treat].sum())
    n_treatment = int(mdata.weights[mask & mdata.treat].sum())
    if n_control == 0 or n_treatment == 0:
        raise SupportError(
            f"segment {segment.canonical_string()} has no rows in "
            f"{'control' if n_control == 0 else 'treatment'}")
    fitted = model.train(spec, mdata)
    estimate = generic_estimate(model, fitted, mdata, mask.astype(np.float64))
    variance = _variance(model, fitted, spec, mdata, mask.astype(np.float64))
    return _effect_from_parts(model, fitted, spec, estimate, variance, "cate",
                              label or segment.canonical_string(),
                              n_control, n_treatment)


def dynamic_te(model_kind: str, spec: AnalysisSpec, data,
               buckets: list[int] | None = None) -> list[TreatmentEffect]:
    """One effect per time bucket, predicting both potential outcomes at t = t*.

    With ``buckets=None`` every populated bucket is analyzed. A requested
    bucket lacking support in either cell is skipped so the remaining
    buckets still come back; if no bucket survives, the first failure is
    raised.
    """
    model = resolve_model(model_kind)
    mdata = data if isinstance(data, ModelData) else model_data(spec, data)
    if mdata.time is None:
        raise ValidationError("dynamic effects need a time column in the analysis spec")
    populated = sorted(int(b) for b in np.unique(mdata.time))
    requested = populated if buckets is None else [int(b) for b in buckets]
    fitted = model.train(spec, mdata)
    out: list[TreatmentEffect] = []
    errors: list[SupportError] = []
    for bucket in requested:
        in_bucket = mdata.time == bucket
        n_control = int(mdata.weights[in_bucket & ~mdata.treat].sum())
        n_treatment = int(mdata.weights[in_bucket & mdata.treat].sum())
        if n_control == 0 or n_treatment == 0:
            errors.append(SupportError(
                f"time bucket {bucket} has no rows in "
                f"{'control' if n_control == 0 else 'treatment'}"))
            continue
        estimate = generic_estimate(model, fitted, mdata, time_override=bucket)
        variance = _variance(model, fitted, spec, mdata, time_override=bucket)
        out.append(_effect_from_parts(
            model, fitted, spec, estimate, variance, "dte",
            bucket_label(bucket, spec.time_granularity), n_control, n_treatment,
            extras={"bucket": bucket}))
    if errors and not out:
        raise errors[0]
    return out
