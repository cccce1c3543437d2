"""Minipatch leave-one-covariate-out (LOCO-MP) feature importance for
right-censored survival data, with random survival forests, penalized Cox
regression, stability diagnostics and a repeated cross-validation harness."""

__version__ = "0.1.0"

from .dataset import (DatasetError, Schema, SurvivalDataset, TimeGrid, discretize, load_csv,
                      variance_filter, write_csv)
from .errors import CensoringSaturationError, ConvergenceError, NoEventsError
from .hazard import HazardCurve, ObservedOutcome, mean_nll, nll, survival
from .locomp import MiniPatch, OcclusionReport, sample_minipatches

__all__ = [
    "__version__",
    "DatasetError",
    "Schema",
    "SurvivalDataset",
    "TimeGrid",
    "discretize",
    "load_csv",
    "variance_filter",
    "write_csv",
    "CensoringSaturationError",
    "ConvergenceError",
    "NoEventsError",
    "HazardCurve",
    "ObservedOutcome",
    "mean_nll",
    "nll",
    "survival",
    "MiniPatch",
    "OcclusionReport",
    "sample_minipatches",
]
