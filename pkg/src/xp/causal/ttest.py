"""Two-sample mean and proportion comparisons on sufficient statistics.

All three tests run from per-cell (n, mean, M2) triples, so they work
identically on raw samples and compressed groups.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError
from .base import AnalysisSpec, FittedModel, ModelData, TreatmentEffect
from .distributions import (normal_ppf, normal_two_sided_p, student_t_ppf,
                            student_t_two_sided_p)

Moments = tuple[int, float, float]  # (n, mean, m2)


def _as_moments(sample) -> Moments:
    if isinstance(sample, tuple) and len(sample) == 3:
        return int(sample[0]), float(sample[1]), float(sample[2])
    arr = np.asarray(sample, dtype=np.float64)
    mean = float(arr.mean()) if arr.size else 0.0
    return len(arr), mean, float(((arr - mean) ** 2).sum())


def welch_ttest(stats_c, stats_t, ci_level: float = 0.95) -> TreatmentEffect:
    """Unequal-variance two-sample t-test from (n, mean, m2) per cell.

    Accepts raw samples too; they are reduced to moments first.
    """
    nc, mc, m2c = _as_moments(stats_c)
    nt, mt, m2t = _as_moments(stats_t)
    if nc < 2 or nt < 2:
        raise ValidationError(f"welch t-test needs n >= 2 per cell, got {nc} and {nt}")
    vc = m2c / (nc - 1)
    vt = m2t / (nt - 1)
    estimate = mt - mc
    variance = vc / nc + vt / nt
    if variance == 0.0:
        df = float(nc + nt - 2)
        p = 1.0 if estimate == 0.0 else 0.0
        half = 0.0
    else:
        df = variance ** 2 / ((vc / nc) ** 2 / (nc - 1) + (vt / nt) ** 2 / (nt - 1))
        t = estimate / math.sqrt(variance)
        p = min(student_t_two_sided_p(t, df), 1.0)
        half = student_t_ppf(0.5 + ci_level / 2.0, df) * math.sqrt(variance)
    return TreatmentEffect(
        kind="ate", estimate=estimate, variance=variance,
        ci_low=estimate - half, ci_high=estimate + half, ci_level=ci_level,
        p_value=p, method="t-test", n_control=nc, n_treatment=nt,
        extras={"df": df, "variance_mode": "welch"})


def pooled_ttest(stats_c, stats_t, ci_level: float = 0.95) -> TreatmentEffect:
    """Equal-variance two-sample t-test; equivalent to OLS on a lone binary regressor."""
    nc, mc, m2c = _as_moments(stats_c)
    nt, mt, m2t = _as_moments(stats_t)
    if nc < 2 or nt < 2:
        raise ValidationError(f"pooled t-test needs n >= 2 per cell, got {nc} and {nt}")
    df = float(nc + nt - 2)
    pooled_var = (m2c + m2t) / df
    estimate = mt - mc
    variance = pooled_var * (1.0 / nc + 1.0 / nt)
    if variance == 0.0:
        p = 1.0 if estimate == 0.0 else 0.0
        half = 0.0
    else:
        t = estimate / math.sqrt(variance)
        p = min(student_t_two_sided_p(t, df), 1.0)
        half = student_t_ppf(0.5 + ci_level / 2.0, df) * math.sqrt(variance)
    return TreatmentEffect(
        kind="ate", estimate=estimate, variance=variance,
        ci_low=estimate - half, ci_high=estimate + half, ci_level=ci_level,
        p_value=p, method="t-test", n_control=nc, n_treatment=nt,
        extras={"df": df, "variance_mode": "pooled"})


def two_proportion_test(successes_c: int, n_c: int, successes_t: int, n_t: int,
                        ci_level: float = 0.95) -> TreatmentEffect:
    """Pooled-variance z-test for the difference of two proportions.

    The p-value uses the pooled standard error; the confidence interval the
    unpooled one, following standard practice.
    """
    for s, n in ((successes_c, n_c), (successes_t, n_t)):
        if n < 1:
            raise ValidationError("proportion test needs n >= 1 in both cells")
        if not 0 <= s <= n:
            raise ValidationError(f"successes {s} outside [0, {n}]")
    pc = successes_c / n_c
    pt = successes_t / n_t
    estimate = pt - pc
    pooled = (successes_c + successes_t) / (n_c + n_t)
    se_pooled = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n_c + 1.0 / n_t))
    se_unpooled = math.sqrt(pc * (1.0 - pc) / n_c + pt * (1.0 - pt) / n_t)
    if se_pooled == 0.0:
        p = 1.0 if estimate == 0.0 else 0.0
    else:
        p = min(normal_two_sided_p(estimate / se_pooled), 1.0)
    half = normal_ppf(0.5 + ci_level / 2.0) * se_unpooled
    return TreatmentEffect(
        kind="ate", estimate=estimate, variance=se_unpooled ** 2,
        ci_low=estimate - half, ci_high=estimate + half, ci_level=ci_level,
        p_value=p, method="proportion-test", n_control=n_c, n_treatment=n_t,
        extras={"p_control": pc, "p_treatment": pt})


class TTestModel:
    """Difference in means as a potential-outcomes model.

    Training reduces each cell to pooled moments; predicting the potential
    outcome returns the trained cell mean for every row.
    """

    name = "t-test"
    needs_unit_level = False
    moments_only_estimate = True

    def train(self, spec: AnalysisSpec, data: ModelData) -> FittedModel:
        nc, mc, m2c = data.cell_moments(False)
        nt, mt, m2t = data.cell_moments(True)
        if nc < 2 or nt < 2:
            raise ValidationError(f"t-test needs n >= 2 per cell, got {nc} and {nt}")
        mode = spec.option("variance")
        if mode == "pooled":
            df = float(nc + nt - 2)
            pooled_var = (m2c + m2t) / df
            variance = pooled_var * (1.0 / nc + 1.0 / nt)
        else:
            vc = m2c / (nc - 1)
            vt = m2t / (nt - 1)
            variance = vc / nc + vt / nt
            df = float(nc + nt - 2) if variance == 0.0 else \
                variance ** 2 / ((vc / nc) ** 2 / (nc - 1) + (vt / nt) ** 2 / (nt - 1))
        beta = np.array([mc, mt - mc])
        covariance = np.array([[m2c / max(nc - 1, 1) / nc, 0.0], [0.0, variance]])
        return FittedModel(
            kind="t-test", beta=beta, covariance=covariance,
            sigma2=(m2c + m2t) / max(nc + nt - 2, 1), dof=df, n_obs=nc + nt,
            n_control=nc, n_treatment=nt,
            coefficients=("control_mean", "treatment_effect"))

    def predict(self, fitted: FittedModel, data: ModelData,
                time_override: int | None = None) -> np.ndarray:
        mc, diff = fitted.beta
        return np.where(data.treat, mc + diff, mc)

    def ate_variance(self, fitted: FittedModel, data: ModelData,
                     mask: np.ndarray | None = None,
                     time_override: int | None = None) -> float:
        return float(fitted.covariance[1, 1])

    def ate_shortcut(self, fitted: FittedModel, data: ModelData) -> float:
        return float(fitted.beta[1])

    def reference_distribution(self, fitted: FittedModel) -> tuple[str, float]:
        return ("t", float(fitted.dof))


class ProportionModel:
    """Two-proportion contrast on a boolean (0/1) metric."""

    name = "proportion-test"
    needs_unit_level = False
    moments_only_estimate = True

    def train(self, spec: AnalysisSpec, data: ModelData) -> FittedModel:
        nc, pc, _ = data.cell_moments(False)
        nt, pt, _ = data.cell_moments(True)
        if nc < 1 or nt < 1:
            raise ValidationError("proportion test needs n >= 1 per cell")
        for label, p in (("control", pc), ("treatment", pt)):
            if not -1e-9 <= p <= 1.0 + 1e-9:
                raise ValidationError(
                    f"{label} mean {p} outside [0, 1]; proportion test needs a boolean metric")
        se2 = pc * (1.0 - pc) / nc + pt * (1.0 - pt) / nt
        beta = np.array([pc, pt - pc])
        covariance = np.array([[pc * (1 - pc) / nc, 0.0], [0.0, se2]])
        return FittedModel(
            kind="proportion-test", beta=beta, covariance=covariance, sigma2=se2,
            dof=max(nc + nt - 2, 1), n_obs=nc + nt, n_control=nc, n_treatment=nt,
            coefficients=("control_rate", "rate_difference"))

    def predict(self, fitted: FittedModel, data: ModelData,
                time_override: int | None = None) -> np.ndarray:
        pc, diff = fitted.beta
        return np.where(data.treat, pc + diff, pc)

    def ate_variance(self, fitted: FittedModel, data: ModelData,
                     mask: np.ndarray | None = None,
                     time_override: int | None = None) -> float:
        return float(fitted.covariance[1, 1])

    def ate_shortcut(self, fitted: FittedModel, data: ModelData) -> float:
        return float(fitted.beta[1])

    def p_value(self, fitted: FittedModel, data: ModelData) -> float:
        """Pooled-variance z-test, matching :func:`two_proportion_test`."""
        nc, nt = fitted.n_control, fitted.n_treatment
        pc, diff = fitted.beta
        pt = pc + diff
        pooled = (pc * nc + pt * nt) / (nc + nt)
        se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / nc + 1.0 / nt))
        if se == 0.0:
            return 1.0 if diff == 0.0 else 0.0
        return min(normal_two_sided_p(diff / se), 1.0)

    def reference_distribution(self, fitted: FittedModel) -> tuple[str, float]:
        return ("normal", 0.0)
