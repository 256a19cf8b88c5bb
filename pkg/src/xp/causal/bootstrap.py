"""Bootstrap variance for arbitrary effect estimators.

Unit-level data is resampled row-wise. Compressed data is resampled by
drawing group counts from a multinomial over n_g/N - the distribution of
unit resampling marginalized to groups - which cannot recreate
within-group dispersion, so it is only offered to models whose point
estimate depends on (n, mean) per group alone.

Each replicate derives its own RNG stream from (seed, replicate index), so
serial and worker-pool execution produce bit-identical results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from ..errors import CapabilityError, EngineError, ValidationError
from .base import AnalysisSpec, ModelData, model_data, resolve_model

MIN_BOOTSTRAP = 100
REDRAW_FACTOR = 10


def _resample(data: ModelData, rng: np.random.Generator) -> ModelData:
    if not data.from_compressed:
        idx = rng.integers(0, data.n_rows, data.n_rows)
        return data.take(idx)
    total = data.n_units
    counts = rng.multinomial(total, data.weights / data.weights.sum())
    keep = np.flatnonzero(counts > 0)
    resampled = data.take(keep)
    return replace(resampled, weights=counts[keep].astype(np.float64),
                   m2=np.zeros(len(keep)))


def _estimate(model, spec: AnalysisSpec, data: ModelData) -> float:
    from .effects import generic_estimate  # local import to avoid a cycle

    fitted = model.train(spec, data)
    return generic_estimate(model, fitted, data)


def bootstrap_variance(model_kind: str, spec: AnalysisSpec, data, b: int,
                       seed: int, workers: int | None = None
                       ) -> tuple[float, tuple[float, float]]:
    """Resample-and-refit variance plus a percentile confidence interval.

    A replicate whose resample violates the model's fit preconditions
    (for example one cell vanishing) is redrawn from its own stream, up to
    ``REDRAW_FACTOR * b`` attempts across the run.
    """
    if b < MIN_BOOTSTRAP:
        raise ValidationError(f"bootstrap count {b} below {MIN_BOOTSTRAP}")
    model = resolve_model(model_kind)
    mdata = data if isinstance(data, ModelData) else model_data(spec, data)
    if mdata.from_compressed and not getattr(model, "moments_only_estimate", False):
        raise CapabilityError(
            f"model {model_kind!r} cannot be bootstrapped on compressed data; "
            "it needs within-group dispersion")

    budget = [REDRAW_FACTOR * b]

    def one(i: int) -> float:
        rng = np.random.default_rng([seed, i])
        while True:
            if budget[0] <= 0:
                raise EngineError(
                    f"bootstrap exceeded {REDRAW_FACTOR * b} resample attempts")
            budget[0] -= 1
            try:
                return _estimate(model, spec, _resample(mdata, rng))
            except ValidationError:
                continue

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            estimates = np.array(list(pool.map(one, range(b))))
    else:
        estimates = np.array([one(i) for i in range(b)])

    variance = float(estimates.var(ddof=1))
    level = spec.ci_level
    lo, hi = np.quantile(estimates, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return variance, (float(lo), float(hi))
