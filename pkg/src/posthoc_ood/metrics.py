"""Detection metrics and threshold calibration.

OOD is the positive class throughout and scores are oriented higher = more
OOD. Both metrics are computed from exact integer counts, so results match
a pairwise / exhaustive-threshold count bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DataError
from .numerics import nearest_rank_index

FPR95_CONVENTION = (
    "FPR95: step-function ROC, thresholds at observed OOD scores, "
    "largest threshold with TPR >= target, no interpolation"
)


@dataclass(frozen=True)
class EvalOutcome:
    auroc: float
    fpr95: float
    n_id: int
    n_ood: int


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    eta: float
    score_name: str = ""


def _side(scores, name: str) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise DataError(f"{name} scores are empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} scores contain non-finite values")
    return arr


def auroc(id_scores, ood_scores) -> float:
    """Mann-Whitney AUROC with half credit for ties.

    (#{ood > id} + 0.5 #{ood == id}) / (n m), from sorted ID scores.
    """
    ids = np.sort(_side(id_scores, "ID"), kind="stable")
    ood = _side(ood_scores, "OOD")
    below = np.searchsorted(ids, ood, side="left")
    at_or_below = np.searchsorted(ids, ood, side="right")
    greater = int(np.sum(below, dtype=np.int64))
    ties = int(np.sum(at_or_below - below, dtype=np.int64))
    return (2 * greater + ties) / (2 * ids.size * ood.size)


def _target_count(tpr_target: float, m: int) -> int:
    if not 0 < tpr_target <= 1:
        raise DataError(f"TPR target must be in (0, 1], got {tpr_target}")
    return max(1, math.ceil(Fraction(repr(float(tpr_target))) * m))


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    """FPR at the largest observed OOD score t with |{ood >= t}| / m >= target."""
    ids = np.sort(_side(id_scores, "ID"), kind="stable")
    ood = np.sort(_side(ood_scores, "OOD"), kind="stable")[::-1]
    k = _target_count(tpr_target, ood.size)
    t = ood[k - 1]
    false_pos = ids.size - int(np.searchsorted(ids, t, side="left"))
    return false_pos / ids.size


def evaluate(id_scores, ood_scores, tpr_target: float = 0.95) -> EvalOutcome:
    return EvalOutcome(
        auroc=auroc(id_scores, ood_scores),
        fpr95=fpr_at_tpr(id_scores, ood_scores, tpr_target),
        n_id=int(np.size(id_scores)),
        n_ood=int(np.size(ood_scores)),
    )


def calibrate(cal_scores, eta: float = 95.0, score_name: str = "") -> CalibrationResult:
    """Threshold at the nearest-rank ``eta``-th percentile of ID calibration
    scores."""
    cal = np.sort(_side(cal_scores, "calibration"), kind="stable")
    return CalibrationResult(
        threshold=float(cal[nearest_rank_index(eta, cal.size)]),
        eta=float(eta),
        score_name=score_name,
    )


def detect(test_scores, calibration: CalibrationResult) -> np.ndarray:
    """Outlier flags: score strictly above the calibrated threshold."""
    if not math.isfinite(calibration.threshold):
        raise DataError("calibration threshold is not finite")
    return np.asarray(test_scores, dtype=np.float64).reshape(-1) > calibration.threshold
