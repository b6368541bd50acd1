"""Post-hoc out-of-distribution detection from frozen features and logits.

Fit in-distribution statistics once (:func:`fit_all`), score any batch with
one of eight score functions (:func:`score_batch`), then evaluate with
AUROC / FPR95 or calibrate a threshold and flag outliers.
"""

from .errors import DataError, NumericalError, OODError, UsageError
from .fitstats import FitConfig, IdStats, LinearHead, fit_all
from .metrics import auroc, calibrate, detect, evaluate, fpr_at_tpr
from .scores import SCORE_NAMES, OodScores, score_batch

__all__ = [
    "DataError",
    "NumericalError",
    "OODError",
    "UsageError",
    "FitConfig",
    "IdStats",
    "LinearHead",
    "fit_all",
    "auroc",
    "calibrate",
    "detect",
    "evaluate",
    "fpr_at_tpr",
    "SCORE_NAMES",
    "OodScores",
    "score_batch",
]
