"""Weighted least squares on unit rows or compressed groups.

The solve goes through the normal equations with an unpivoted Cholesky
factorization; a pivot below 1e-10 of the largest diagonal is a hard rank
error naming the collinear columns instead of silently dropping one. On
compressed data the residual sum of squares must include the within-group
spread: SSE = sum(M2_g) + sum(n_g * (ybar_g - x_g' beta)^2), which is what
makes the compressed fit equal the raw fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import RankError, SupportError, ValidationError
from .base import AnalysisSpec, FittedModel, ModelData

PIVOT_RTOL = 1e-10


@dataclass(frozen=True)
class Term:
    kind: str  # intercept | treat | cov | num | time | treat_cov | treat_time
    column: str = ""
    level: int = -1
    label: str = "intercept"


@dataclass(frozen=True)
class Design:
    """Column plan for the design matrix; replayable under forced treatment."""

    terms: tuple[Term, ...]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.terms)

    def matrix(self, data: ModelData, time_override: int | None = None) -> np.ndarray:
        n = data.n_rows
        cols = np.empty((len(self.terms), n))
        treat = data.treat.astype(np.float64)
        for i, term in enumerate(self.terms):
            if term.kind == "intercept":
                cols[i] = 1.0
            elif term.kind == "treat":
                cols[i] = treat
            elif term.kind == "cov":
                codes, _ = data.covariates[term.column]
                cols[i] = codes == term.level
            elif term.kind == "num":
                cols[i] = data.numeric_covariates[term.column]
            elif term.kind == "time":
                t = _time_values(data, time_override)
                cols[i] = t == term.level
            elif term.kind == "treat_cov":
                codes, _ = data.covariates[term.column]
                cols[i] = treat * (codes == term.level)
            elif term.kind == "treat_time":
                t = _time_values(data, time_override)
                cols[i] = treat * (t == term.level)
            else:
                raise ValidationError(f"unknown design term {term.kind!r}")
        return cols.T


def _time_values(data: ModelData, override: int | None) -> np.ndarray:
    if data.time is None:
        raise ValidationError("model has time terms but the dataset has no time column")
    if override is None:
        return data.time
    return np.full(data.n_rows, override, dtype=np.int64)


def build_design(spec: AnalysisSpec, data: ModelData) -> Design:
    """Intercept + treatment + dummy-coded covariates (+ requested interactions).

    Dummies use the first observed level of each covariate as the
    reference; unobserved dictionary levels are skipped so the matrix stays
    full rank. A time column adds bucket dummies and treatment-by-bucket
    interactions, unless only one bucket is populated (then time drops out
    and the model degenerates to the plain treatment contrast).
    """
    terms = [Term("intercept"), Term("treat", label=f"treat[{spec.treatment}]")]
    for name in spec.covariates:
        if name in data.covariates:
            codes, levels = data.covariates[name]
            for level in _observed(codes)[1:]:
                terms.append(Term("cov", name, int(level), f"{name}={levels[level]}"))
        elif name in data.numeric_covariates:
            terms.append(Term("num", name, label=name))
        else:
            raise ValidationError(f"covariate {name!r} missing from dataset")
    for name in spec.interactions:
        if name not in data.covariates:
            raise ValidationError(f"interaction covariate {name!r} missing or not categorical")
        codes, levels = data.covariates[name]
        for level in _observed(codes)[1:]:
            terms.append(Term("treat_cov", name, int(level),
                              f"treat:{name}={levels[level]}"))
    if spec.time_column is not None and data.time is not None:
        buckets = _observed(data.time)
        for bucket in buckets[1:]:
            terms.append(Term("time", spec.time_column, int(bucket),
                              f"{spec.time_column}={bucket}"))
        for bucket in buckets[1:]:
            terms.append(Term("treat_time", spec.time_column, int(bucket),
                              f"treat:{spec.time_column}={bucket}"))
    return Design(tuple(terms))


def _observed(codes: np.ndarray) -> list[int]:
    return sorted(int(v) for v in np.unique(codes))


def solve_normal_equations(xtwx: np.ndarray, labels: tuple[str, ...]
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factor and inverse of X'WX with an explicit rank check."""
    p = xtwx.shape[0]
    chol = np.zeros_like(xtwx)
    max_pivot = float(np.max(np.diag(xtwx))) if p else 0.0
    for j in range(p):
        pivot = xtwx[j, j] - np.dot(chol[j, :j], chol[j, :j])
        if pivot <= PIVOT_RTOL * max_pivot:
            raise RankError(
                "design matrix is rank deficient; collinear columns: "
                + ", ".join(_collinear_columns(xtwx, chol, j, labels)),
                columns=_collinear_columns(xtwx, chol, j, labels))
        chol[j, j] = np.sqrt(pivot)
        if j + 1 < p:
            chol[j + 1:, j] = (xtwx[j + 1:, j] - chol[j + 1:, :j] @ chol[j, :j]) / chol[j, j]
    identity = np.eye(p)
    inv_l = _forward_solve(chol, identity)
    return chol, inv_l.T @ inv_l


def _forward_solve(lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    p = lower.shape[0]
    out = np.zeros_like(rhs, dtype=np.float64)
    for i in range(p):
        out[i] = (rhs[i] - lower[i, :i] @ out[:i]) / lower[i, i]
    return out


def _collinear_columns(xtwx, chol, j, labels) -> list[str]:
    """Columns implicated when pivot j collapses: regress column j on 0..j-1."""
    involved = [labels[j]]
    if j > 0:
        sub = chol[:j, :j]
        try:
            z = _forward_solve(sub, xtwx[:j, j].reshape(-1, 1))
            coef = _forward_solve(sub.T[::-1, ::-1], z[::-1])[::-1].ravel()
            scale = max(np.abs(coef).max(), 1.0)
            for k in np.flatnonzero(np.abs(coef) > 1e-6 * scale):
                involved.append(labels[k])
        except (ZeroDivisionError, FloatingPointError):
            involved.extend(labels[:j])
    return sorted(set(involved))


def fit_wls(spec: AnalysisSpec, data: ModelData, design: Design) -> FittedModel:
    if not data.treat.any() or data.treat.all():
        raise SupportError("need rows in both the control and treatment cell")
    x = design.matrix(data)
    w = data.weights
    y = data.y
    xtwx = x.T @ (x * w[:, None])
    xtwy = x.T @ (w * y)
    chol, xtwx_inv = solve_normal_equations(xtwx, design.labels)
    beta = xtwx_inv @ xtwy

    n_units = data.n_units
    p = x.shape[1]
    dof = n_units - p
    if dof <= 0:
        raise ValidationError(f"not enough observations: N={n_units}, parameters={p}")
    resid = y - x @ beta
    sse = float(np.dot(w, resid ** 2) + data.m2.sum())
    sigma2 = sse / dof
    if spec.option("robust"):
        # HC0 sandwich; on compressed rows the per-unit squared residuals of a
        # group sum to n_g * resid_g^2 + M2_g.
        meat = (x * ((w * resid ** 2 + data.m2)[:, None])).T @ x
        covariance = xtwx_inv @ meat @ xtwx_inv
    else:
        covariance = sigma2 * xtwx_inv
    covariance = (covariance + covariance.T) / 2.0
    return FittedModel(
        kind="ols", beta=beta, covariance=covariance, sigma2=sigma2, dof=dof,
        n_obs=n_units, n_control=data.n_control, n_treatment=data.n_treatment,
        coefficients=design.labels, design=design)


class OlsModel:
    """Linear model; the workhorse for ATE, CATE, and per-bucket effects."""

    name = "ols"
    needs_unit_level = False
    moments_only_estimate = True  # point estimate depends on (n, mean) per group

    def train(self, spec: AnalysisSpec, data: ModelData) -> FittedModel:
        return fit_wls(spec, data, build_design(spec, data))

    def predict(self, fitted: FittedModel, data: ModelData,
                time_override: int | None = None) -> np.ndarray:
        design: Design = fitted.design
        return design.matrix(data, time_override) @ fitted.beta

    def effect_gradient(self, fitted: FittedModel, data: ModelData,
                        mask: np.ndarray | None = None,
                        time_override: int | None = None) -> np.ndarray:
        """Delta-method gradient: weighted mean of (x1 - x0) feature rows."""
        design: Design = fitted.design
        x1 = design.matrix(data.with_treatment(1), time_override)
        x0 = design.matrix(data.with_treatment(0), time_override)
        w = data.weights if mask is None else data.weights * mask
        total = w.sum()
        if total <= 0:
            raise SupportError("empty averaging set for effect gradient")
        return (w @ (x1 - x0)) / total

    def ate_variance(self, fitted: FittedModel, data: ModelData,
                     mask: np.ndarray | None = None,
                     time_override: int | None = None) -> float:
        g = self.effect_gradient(fitted, data, mask, time_override)
        return float(g @ fitted.covariance @ g)

    def ate_shortcut(self, fitted: FittedModel, data: ModelData) -> float | None:
        """beta_treat is the ATE when treatment enters without interactions."""
        design: Design = fitted.design
        if any(t.kind in ("treat_cov", "treat_time") for t in design.terms):
            return None
        for i, term in enumerate(design.terms):
            if term.kind == "treat":
                return float(fitted.beta[i])
        return None

    def reference_distribution(self, fitted: FittedModel) -> tuple[str, float]:
        return ("t", float(fitted.dof))
