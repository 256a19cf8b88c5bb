"""Mann-Whitney rank test with midrank ties and continuity correction.

Needs unit-level samples; rank statistics have no sufficient-statistics
form, so this test bypasses compression.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError
from .base import TreatmentEffect
from .distributions import normal_ppf, normal_sf


def midranks(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fractional ranks (ties get the mean rank) and tie-group sizes."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    n = len(values)
    ranks = np.empty(n, dtype=np.float64)
    boundaries = np.flatnonzero(np.diff(sorted_vals) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [n]])
    for lo, hi in zip(starts, stops):
        ranks[order[lo:hi]] = (lo + hi + 1) / 2.0  # mean of ranks lo+1 .. hi
    return ranks, (stops - starts).astype(np.float64)


def mann_whitney(y_c, y_t, ci_level: float = 0.95) -> TreatmentEffect:
    """U statistic for treatment over control with a normal-approximation p.

    The estimate field carries the rank-biserial effect size
    2U/(n_c*n_t) - 1 in [-1, 1]; the raw U is in ``extras``.
    """
    control = np.asarray(y_c, dtype=np.float64)
    treatment = np.asarray(y_t, dtype=np.float64)
    nc, nt = len(control), len(treatment)
    if nc == 0 or nt == 0:
        raise ValidationError("mann-whitney needs non-empty samples in both cells")
    combined = np.concatenate([control, treatment])
    ranks, tie_sizes = midranks(combined)
    rank_sum_t = float(ranks[nc:].sum())
    u = rank_sum_t - nt * (nt + 1) / 2.0

    n = nc + nt
    mu = nc * nt / 2.0
    tie_term = float(((tie_sizes ** 3 - tie_sizes)).sum()) / (n * (n - 1)) if n > 1 else 0.0
    sigma2 = (nc * nt / 12.0) * ((n + 1) - tie_term)
    if sigma2 <= 0:
        z = 0.0
        p = 1.0
    else:
        shift = abs(u - mu) - 0.5  # continuity correction
        z = max(shift, 0.0) / math.sqrt(sigma2)
        p = min(2.0 * normal_sf(z), 1.0)

    scale = 2.0 / (nc * nt)
    estimate = scale * u - 1.0
    variance = scale * scale * sigma2
    half = normal_ppf(0.5 + ci_level / 2.0) * math.sqrt(variance)
    return TreatmentEffect(
        kind="ate", estimate=estimate, variance=variance,
        ci_low=max(estimate - half, -1.0), ci_high=min(estimate + half, 1.0),
        ci_level=ci_level, p_value=p, method="mann-whitney",
        n_control=nc, n_treatment=nt, extras={"u": u, "z": z})
