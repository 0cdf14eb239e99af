"""Local false discovery rates for chi-square(1) association statistics.

The null proportion and the common non-centrality of a two-component
chi-square(1) mixture are estimated in closed form by the method of moments
(:func:`fit_mm`); :func:`fit_ml` and :func:`bh_stepup` are comparators.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataIOError, DomainError, LfdrError
from .mixture import DecisionConfig, MixtureParams, decide, lfdr, threshold_hu
from .estimators import (
    BhResult,
    FitResult,
    MLBounds,
    MomentSummary,
    StatVector,
    bh_stepup,
    fit_ml,
    fit_mm,
    moments,
    stats_to_pvalues,
)

__all__ = [
    "BhResult", "ConfigError", "DataIOError", "DecisionConfig", "DomainError", "FitResult",
    "LfdrError", "MLBounds", "MixtureParams", "MomentSummary", "StatVector", "bh_stepup",
    "decide", "fit_ml", "fit_mm", "lfdr", "moments", "stats_to_pvalues", "threshold_hu",
]
