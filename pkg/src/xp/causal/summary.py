"""Per-cell descriptive statistics.

Counts, means, and variances come straight from sufficient statistics;
min/max and quantiles exist only when unit-level values are available.
"""

from __future__ import annotations

import numpy as np

from ..errors import CapabilityError
from .base import (QUANTILE_POINTS, AnalysisSpec, CellSummary, ModelData,
                   SummaryStatistics, model_data)
from .quantile import sample_quantile


def summary_statistics(data, spec: AnalysisSpec,
                       include_quantiles: bool = True) -> SummaryStatistics:
    mdata = data if isinstance(data, ModelData) else model_data(spec, data)
    if mdata.from_compressed and include_quantiles:
        raise CapabilityError(
            "quantiles need unit-level values; this dataset is compressed-only")
    cells = {}
    for label, treat in ((spec.control, False), (spec.treatment, True)):
        n, mean, m2 = mdata.cell_moments(treat)
        variance = m2 / (n - 1) if n > 1 else 0.0
        if include_quantiles and n > 0:
            values = mdata.unit_values(treat)
            cells[label] = CellSummary(
                count=n, mean=mean, variance=variance,
                minimum=float(values.min()), maximum=float(values.max()),
                quantiles=tuple(sample_quantile(values, q) for q in QUANTILE_POINTS))
        else:
            cells[label] = CellSummary(count=n, mean=mean, variance=variance)
    return SummaryStatistics(cells)
