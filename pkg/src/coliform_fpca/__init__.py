"""Sparse functional PCA of longitudinal fecal-coliform monitoring series."""

from .fpca import FpcaConfig, FpcaModel, fit_fpca, integral_scores, pace_scores, reconstruct
from .preprocess import WeeklySeries

__all__ = [
    "FpcaConfig",
    "FpcaModel",
    "WeeklySeries",
    "fit_fpca",
    "integral_scores",
    "pace_scores",
    "reconstruct",
]

__version__ = "0.1.0"
