"""Post-hoc OOD score functions.

Every function returns scores oriented so that higher means more
out-of-distribution; confidence-style quantities (max softmax, max logit,
logsumexp) are negated. Rows are scored independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError, UsageError
from .fitstats import ClassStats, IdStats, KlTemplates, LinearHead, PrincipalSubspace, ReactParams, VimParams
from .numerics import as_matrix, log_softmax, logistic, logsumexp, softmax

ORIENTATION = "higher = more OOD"
SCORE_NAMES = ("msp", "maxlogit", "energy", "kl_matching", "mahalanobis", "residual", "react", "vim")
UNSUPPORTED = {"odin": "ODIN needs input gradients through a live network"}
KL_FLOOR = 1e-12


@dataclass(frozen=True)
class OodScores:
    values: np.ndarray
    score_name: str
    orientation: str = ORIENTATION

    def __len__(self):
        return self.values.shape[0]


def _scores(values, name: str) -> OodScores:
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{name} produced non-finite scores")
    return OodScores(values=values, score_name=name)


def _features(features, d: int) -> np.ndarray:
    X = as_matrix(features, "features")
    if X.shape[1] != d:
        raise DataError(f"features have {X.shape[1]} columns, fitted statistics expect {d}")
    return X


def score_msp(logits) -> OodScores:
    L = as_matrix(logits, "logits")
    if L.shape[1] < 2:
        raise DataError("MSP needs at least 2 classes")
    return _scores(-np.max(softmax(L, axis=1), axis=1), "msp")


def score_maxlogit(logits) -> OodScores:
    L = as_matrix(logits, "logits")
    return _scores(-np.max(L, axis=1), "maxlogit")


def score_energy(logits) -> OodScores:
    L = as_matrix(logits, "logits")
    return _scores(-logsumexp(L, axis=1), "energy")


def score_kl_matching(logits, templates: KlTemplates) -> OodScores:
    """Smallest KL(softmax(l) || template_k) over class templates."""
    L = as_matrix(logits, "logits")
    q = templates.class_dists
    if L.shape[1] != q.shape[1]:
        raise DataError(f"logits have {L.shape[1]} columns, KL templates have {q.shape[1]}")
    logp = log_softmax(L, axis=1)
    p = np.exp(logp)
    neg_entropy = np.sum(p * logp, axis=1)
    # elementwise reduction instead of a matmul: BLAS rounding depends on batch size
    cross = np.sum(p[:, None, :] * np.log(np.maximum(q, KL_FLOOR))[None, :, :], axis=2)
    kl = neg_entropy[:, None] - cross
    return _scores(np.maximum(np.min(kl, axis=1), 0.0), "kl_matching")


def score_mahalanobis(features, stats: ClassStats) -> OodScores:
    """Smallest squared Mahalanobis distance to a class centroid under the
    shared precision."""
    X = _features(features, stats.centroids.shape[1])
    P = stats.shared_precision
    best = np.full(X.shape[0], np.inf)
    for mu in stats.centroids:
        diff = X - mu
        best = np.minimum(best, np.sum((diff @ P) * diff, axis=1))
    return _scores(best, "mahalanobis")


def score_residual(features, subspace: PrincipalSubspace) -> OodScores:
    X = _features(features, subspace.feature_dim)
    return _scores(subspace.residual_norms(X), "residual")


def score_react(features, head: LinearHead | None, react: ReactParams) -> OodScores:
    """Energy of the logits recomputed from activations clipped at the
    fitted percentile."""
    if head is None:
        raise DataError("ReAct requires head weights (W, b) to recompute logits after clipping")
    X = _features(features, head.feature_dim)
    clipped = np.minimum(X, react.clip_value)
    return _scores(-logsumexp(head.logits(clipped), axis=1), "react")


def score_vim(features, logits, vim: VimParams) -> OodScores:
    """Softmax probability of the virtual logit alpha * residual norm,
    evaluated as logistic(alpha * r - logsumexp(l))."""
    X = _features(features, vim.subspace.feature_dim)
    L = as_matrix(logits, "logits")
    if L.shape[0] != X.shape[0]:
        raise DataError(f"{X.shape[0]} feature rows vs {L.shape[0]} logit rows")
    virtual = vim.alpha * vim.subspace.residual_norms(X)
    return _scores(logistic(virtual - logsumexp(L, axis=1)), "vim")


# (needs features, needs logits) per score
REQUIREMENTS = {
    "msp": (False, True),
    "maxlogit": (False, True),
    "energy": (False, True),
    "kl_matching": (False, True),
    "mahalanobis": (True, False),
    "residual": (True, False),
    "react": (True, False),
    "vim": (True, True),
}


def check_score_name(name: str) -> str:
    if name in UNSUPPORTED:
        raise UsageError(f"score '{name}' is unsupported: {UNSUPPORTED[name]}")
    if name not in SCORE_NAMES:
        raise UsageError(f"unknown score '{name}'; valid names: {', '.join(SCORE_NAMES)}")
    return name


def score_batch(name: str, features, logits, stats: IdStats) -> OodScores:
    """Dispatch ``name`` to its score function."""
    check_score_name(name)
    need_x, need_l = REQUIREMENTS[name]
    if need_x and features is None:
        raise DataError(f"score '{name}' requires features")
    if need_l and logits is None:
        raise DataError(f"score '{name}' requires logits")
    if need_l:
        L = as_matrix(logits, "logits")
        if L.shape[1] != stats.num_classes:
            raise DataError(f"logits have {L.shape[1]} columns, fitted statistics expect {stats.num_classes}")

    if name == "msp":
        return score_msp(logits)
    if name == "maxlogit":
        return score_maxlogit(logits)
    if name == "energy":
        return score_energy(logits)
    if name == "kl_matching":
        if stats.kl is None:
            raise DataError("score 'kl_matching' requires KL templates fitted from training logits")
        return score_kl_matching(logits, stats.kl)
    if name == "mahalanobis":
        return score_mahalanobis(features, stats.class_stats)
    if name == "residual":
        return score_residual(features, stats.subspace)
    if name == "react":
        return score_react(features, stats.head, stats.react)
    if stats.vim is None:
        raise DataError("score 'vim' requires alpha fitted from training logits")
    return score_vim(features, logits, stats.vim)
