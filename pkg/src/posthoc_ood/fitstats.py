"""In-distribution statistics consumed by the score functions.

All fits are deterministic. Class means and the shared covariance are
accumulated over each class's rows in a canonical (lexicographic) order, so
shuffling the training set does not change a single bit of the result.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError
from .numerics import (
    as_matrix,
    nearest_rank_percentile,
    pseudo_inverse,
    regularized_precision,
    softmax,
    sym_eig,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_PRINCIPAL_DIM = 512


@dataclass(frozen=True)
class FitConfig:
    principal_dim: Optional[int] = None  # None -> min(d, 512)
    shrink: float = 1e-6
    react_p: float = 90.0
    eta: float = 95.0

    def resolve_principal_dim(self, d: int) -> int:
        if self.principal_dim is None:
            return min(d, DEFAULT_MAX_PRINCIPAL_DIM)
        return self.principal_dim


@dataclass(frozen=True)
class LinearHead:
    """Classifier head: logits = weights @ x + bias."""

    weights: np.ndarray  # C x d
    bias: np.ndarray  # C

    def __post_init__(self):
        W = as_matrix(self.weights, "head weights")
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if b.shape[0] != W.shape[0]:
            raise DataError(
                f"head bias has {b.shape[0]} entries but weights have {W.shape[0]} rows"
            )
        if not np.all(np.isfinite(b)):
            raise DataError("head bias contains non-finite entries")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights.T + self.bias


@dataclass(frozen=True)
class ClassStats:
    centroids: np.ndarray  # K x d
    shared_precision: np.ndarray  # d x d
    class_counts: np.ndarray  # K


@dataclass(frozen=True)
class PrincipalSubspace:
    origin: np.ndarray  # d
    residual_basis: np.ndarray  # d x (d - D)
    principal_dim: int

    @property
    def feature_dim(self) -> int:
        return self.origin.shape[0]

    def residual_norms(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise DataError(
                f"features have shape {X.shape}, subspace expects {self.feature_dim} columns"
            )
        proj = (X - self.origin) @ self.residual_basis
        return np.sqrt(np.sum(proj * proj, axis=1))


@dataclass(frozen=True)
class VimParams:
    alpha: float
    subspace: PrincipalSubspace


@dataclass(frozen=True)
class KlTemplates:
    class_dists: np.ndarray  # K x C, row k = mean softmax of class k


@dataclass(frozen=True)
class ReactParams:
    clip_value: float
    percentile: float


@dataclass(frozen=True)
class IdStats:
    """Everything fitted on the in-distribution training split.

    ``vim`` and ``kl`` are None when no training logits were supplied, and
    ``head`` is None when no classifier weights were supplied; scores that
    need a missing piece fail at scoring time.
    """

    class_stats: ClassStats
    subspace: PrincipalSubspace
    react: ReactParams
    vim: Optional[VimParams]
    kl: Optional[KlTemplates]
    head: Optional[LinearHead]
    num_classes: int
    feature_dim: int
    config: FitConfig = field(default_factory=FitConfig)


def _check_labels(labels, n: int, num_classes: Optional[int]) -> tuple[np.ndarray, int]:
    raw = np.asarray(labels)
    if raw.ndim != 1 or raw.shape[0] != n:
        raise DataError(f"expected {n} labels, got shape {raw.shape}")
    if raw.dtype.kind == "f":
        if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
            raise DataError("labels must be integers")
    lab = raw.astype(np.int64)
    if n and lab.min() < 0:
        raise DataError(f"label {int(lab.min())} out of range (negative)")
    if num_classes is None:
        num_classes = int(lab.max()) + 1 if n else 0
    elif n and lab.max() >= num_classes:
        raise DataError(f"label {int(lab.max())} out of range [0, {num_classes})")
    counts = np.bincount(lab, minlength=num_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"class {int(empty[0])} has no samples")
    return lab, num_classes


def _canonical_rows(rows: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically (first column most significant)."""
    if rows.shape[0] < 2:
        return rows
    return rows[np.lexsort(rows.T[::-1])]


def fit_class_stats(features, labels, shrink: float = 1e-6,
                    num_classes: Optional[int] = None) -> ClassStats:
    """Class centroids and the floor-regularized inverse of the shared
    within-class covariance (normalized by the total sample count)."""
    X = as_matrix(features, "features")
    n, d = X.shape
    lab, C = _check_labels(labels, n, num_classes)
    if n < C:
        raise DataError(f"need at least {C} samples for {C} classes, got {n}")

    centroids = np.empty((C, d))
    deviations = []
    for k in range(C):
        rows = _canonical_rows(X[lab == k])
        mu = np.sum(rows, axis=0) / rows.shape[0]
        centroids[k] = mu
        deviations.append(rows - mu)
    Z = np.concatenate(deviations, axis=0)
    cov = (Z.T @ Z) / n
    cov = 0.5 * (cov + cov.T)
    return ClassStats(
        centroids=centroids,
        shared_precision=regularized_precision(cov, shrink),
        class_counts=np.bincount(lab, minlength=C),
    )


def fit_subspace(features, head: Optional[LinearHead], principal_dim: int) -> PrincipalSubspace:
    X = as_matrix(features, "features")
    n, d = X.shape
    if n < 2:
        raise DataError(f"subspace fit needs at least 2 samples, got {n}")
    if not 0 <= principal_dim <= d:
        raise DataError(f"principal dim {principal_dim} outside [0, {d}]")
    if head is not None:
        if head.feature_dim != d:
            raise DataError(
                f"head expects {head.feature_dim}-dim features, got {d}"
            )
        origin = -(pseudo_inverse(head.weights) @ head.bias)
    else:
        origin = np.sum(X, axis=0) / n
    centered = X - origin
    cov = (centered.T @ centered) / n
    eig = sym_eig(0.5 * (cov + cov.T))
    return PrincipalSubspace(
        origin=origin,
        residual_basis=np.ascontiguousarray(eig.eigenvectors[:, principal_dim:]),
        principal_dim=principal_dim,
    )


def fit_alpha(features, logits, subspace: PrincipalSubspace) -> VimParams:
    """Scale that matches the summed residual norm to the summed max-logit."""
    X = as_matrix(features, "features")
    L = as_matrix(logits, "logits")
    if X.shape[0] != L.shape[0]:
        raise DataError(f"{X.shape[0]} feature rows vs {L.shape[0]} logit rows")
    if X.shape[0] < 1:
        raise DataError("alpha fit needs at least one sample")
    denom = float(np.sum(subspace.residual_norms(X)))
    if denom == 0.0:
        return VimParams(alpha=1.0, subspace=subspace)
    alpha = float(np.sum(np.max(L, axis=1))) / denom
    if not alpha > 0:
        logger.warning("ViM alpha is %g (training max-logits are not positive on average)", alpha)
    return VimParams(alpha=alpha, subspace=subspace)


def fit_kl_templates(logits, labels, num_classes: Optional[int] = None) -> KlTemplates:
    L = as_matrix(logits, "logits")
    lab, K = _check_labels(labels, L.shape[0], num_classes)
    probs = softmax(L, axis=1)
    dists = np.empty((K, L.shape[1]))
    for k in range(K):
        row = np.sum(probs[lab == k], axis=0) / np.count_nonzero(lab == k)
        dists[k] = row / np.sum(row)
    zeros = np.argwhere(dists <= 0.0)
    if zeros.size:
        k, i = zeros[0]
        raise DataError(f"KL template of class {k} has zero probability at logit {i}")
    return KlTemplates(class_dists=dists)


def fit_react(features, percentile: float = 90.0) -> ReactParams:
    X = np.asarray(features, dtype=np.float64)
    if X.size == 0:
        raise DataError("ReAct fit needs at least one activation")
    return ReactParams(clip_value=nearest_rank_percentile(X, percentile), percentile=percentile)


def check_head_consistency(head: LinearHead, features, logits, max_rows: int = 64) -> None:
    """Verify logits == W x + b on the first ``max_rows`` rows (1e-4, scaled by
    the logit magnitude when it exceeds 1)."""
    X = np.asarray(features, dtype=np.float64)[:max_rows]
    L = np.asarray(logits, dtype=np.float64)[:max_rows]
    if L.shape[1] != head.num_classes:
        raise DataError(f"logits have {L.shape[1]} columns, head has {head.num_classes} classes")
    err = np.abs(head.logits(X) - L)
    tol = 1e-4 * np.maximum(1.0, np.abs(L))
    if np.any(err > tol):
        r, c = np.argwhere(err > tol)[0]
        raise DataError(
            f"head does not reproduce supplied logits: row {r}, class {c}, "
            f"|Wx+b - logit| = {err[r, c]:.3e}"
        )


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DataError as exc:
        raise DataError(f"fit stage '{name}' failed: {exc}") from exc


def fit_all(features, logits, labels, head: Optional[LinearHead] = None,
            config: FitConfig = FitConfig(), num_classes: Optional[int] = None) -> IdStats:
    """Fit every statistic the score functions need.

    ``logits`` may be None; the ViM and KL parts are then left unfitted.
    ``num_classes`` bounds the label range (defaults to max label + 1).
    """
    X = _stage("input", as_matrix, features, "features")
    n, d = X.shape
    L = None
    if logits is not None:
        L = _stage("input", as_matrix, logits, "logits")
        if L.shape[0] != n:
            raise DataError(f"fit stage 'input' failed: {n} feature rows vs {L.shape[0]} logit rows")
    if head is not None:
        if head.feature_dim != d:
            raise DataError(f"fit stage 'head' failed: head expects {head.feature_dim}-dim features, got {d}")
        if L is not None:
            _stage("head", check_head_consistency, head, X, L)

    D = config.resolve_principal_dim(d)
    class_stats = _stage("class_stats", fit_class_stats, X, labels, config.shrink, num_classes)
    subspace = _stage("subspace", fit_subspace, X, head, D)
    react = _stage("react", fit_react, X, config.react_p)
    vim = kl = None
    if L is not None:
        vim = _stage("alpha", fit_alpha, X, L, subspace)
        kl = _stage("kl_templates", fit_kl_templates, L, labels, num_classes)

    if L is not None:
        C = L.shape[1]
    elif head is not None:
        C = head.num_classes
    else:
        C = class_stats.centroids.shape[0]
    return IdStats(
        class_stats=class_stats,
        subspace=subspace,
        react=react,
        vim=vim,
        kl=kl,
        head=head,
        num_classes=C,
        feature_dim=d,
        config=FitConfig(principal_dim=D, shrink=config.shrink,
                         react_p=config.react_p, eta=config.eta),
    )
