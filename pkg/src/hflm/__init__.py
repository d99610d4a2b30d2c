"""Dynamically sparse historical functional linear models.

Estimates a lag-by-day coefficient surface linking a driver series to a
response series with Whittaker (identity-basis) difference penalties, then
thresholds nested tail group norms to recover a day-varying maximum lag.
"""

from .core import (
    CoefficientSurface,
    FitConfig,
    FitResult,
    LagFunction,
    PanelKind,
    PanelSpec,
    SeriesPanel,
    flat_index,
    validate_panel,
)
from .pipeline import evaluate_holdout, run_algorithm1, run_pipeline

__all__ = [
    "CoefficientSurface",
    "FitConfig",
    "FitResult",
    "LagFunction",
    "PanelKind",
    "PanelSpec",
    "SeriesPanel",
    "evaluate_holdout",
    "flat_index",
    "run_algorithm1",
    "run_pipeline",
    "validate_panel",
]

__version__ = "0.1.0"
