"""Quantile treatment effects via bootstrap.

Quantiles have no sufficient-statistics form, so this reads unit-level
samples. Differences of midpoint-interpolated sample quantiles get their
variance and percentile interval from paired bootstrap resamples.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError
from .base import TreatmentEffect
from .distributions import normal_two_sided_p

MIN_BOOTSTRAP = 100


def sample_quantile(values: np.ndarray, q: float) -> float:
    """Midpoint-interpolated sample quantile of an unsorted sample."""
    if not 0.0 < q < 1.0:
        raise ValidationError(f"quantile must be in (0, 1), got {q}")
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValidationError("cannot take a quantile of an empty sample")
    pos = (v.size - 1) * q
    lo = math.floor(pos)
    if pos == lo:
        return float(v[lo])
    return float((v[lo] + v[lo + 1]) / 2.0)


def quantile_te(y_c, y_t, q: float = 0.5, b: int = 1000, seed: int = 0,
                ci_level: float = 0.95) -> TreatmentEffect:
    """Difference of the q-th sample quantiles, with bootstrap uncertainty.

    Each of the ``b`` replicates resamples both cells with replacement and
    recomputes the quantile difference; the p-value is the normal
    approximation from the bootstrap standard error.
    """
    if b < MIN_BOOTSTRAP:
        raise ValidationError(f"bootstrap count {b} below {MIN_BOOTSTRAP}; CI would be unstable")
    control = np.asarray(y_c, dtype=np.float64)
    treatment = np.asarray(y_t, dtype=np.float64)
    if control.size == 0 or treatment.size == 0:
        raise ValidationError("quantile effect needs non-empty samples in both cells")
    estimate = sample_quantile(treatment, q) - sample_quantile(control, q)

    deltas = np.empty(b)
    for i in range(b):
        rng = np.random.default_rng([seed, i])
        rc = control[rng.integers(0, control.size, control.size)]
        rt = treatment[rng.integers(0, treatment.size, treatment.size)]
        deltas[i] = sample_quantile(rt, q) - sample_quantile(rc, q)
    variance = float(deltas.var(ddof=1))
    lo, hi = np.quantile(deltas, [(1.0 - ci_level) / 2.0, (1.0 + ci_level) / 2.0])
    se = math.sqrt(variance)
    p = 1.0 if se == 0.0 and estimate == 0.0 else \
        (0.0 if se == 0.0 else min(normal_two_sided_p(estimate / se), 1.0))
    return TreatmentEffect(
        kind="ate", estimate=estimate, variance=variance,
        ci_low=min(float(lo), estimate), ci_high=max(float(hi), estimate),
        ci_level=ci_level, p_value=p, method="quantile",
        n_control=control.size, n_treatment=treatment.size,
        extras={"q": q, "bootstrap_b": b, "seed": seed})
