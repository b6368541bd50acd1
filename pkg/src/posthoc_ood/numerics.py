"""Dense linear algebra and stable special functions.

Everything here works in float64 and is deterministic: the same input gives
bit-identical output, independent of call history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DataError, NumericalError

EIG_TOL = 1e-12
EIG_MAX_SWEEPS = 100
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` are sorted descending and ``eigenvectors[:, i]`` pairs
    with ``eigenvalues[i]``. Each column is signed so that its
    largest-magnitude entry is non-negative.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array or raise DataError."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def _check_symmetric(a) -> np.ndarray:
    arr = as_matrix(a)
    if arr.shape[0] != arr.shape[1]:
        raise DataError(f"matrix must be square, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise DataError("matrix must be at least 1x1")
    scale = float(np.max(np.abs(arr)))
    asym = float(np.max(np.abs(arr - arr.T)))
    if asym > SYMMETRY_TOL * scale:
        raise DataError(
            f"symmetry violation: max |A - A^T| = {asym:.3e} exceeds "
            f"{SYMMETRY_TOL:g} * max|A| = {SYMMETRY_TOL * scale:.3e}"
        )
    return 0.5 * (arr + arr.T)


def _round_robin(d: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament ordering: every index pair exactly once per sweep, grouped
    into rounds of disjoint pairs."""
    m = d + (d % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p >= d or q >= d:
                continue
            if p > q:
                p, q = q, p
            ps.append(p)
            qs.append(q)
        order = np.argsort(ps, kind="stable")
        rounds.append(
            (np.asarray(ps, dtype=np.intp)[order], np.asarray(qs, dtype=np.intp)[order])
        )
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    upper = np.triu(a, 1)
    return math.sqrt(2.0 * float(np.sum(upper * upper)))


def sym_eig(a, tol: float = EIG_TOL, max_sweeps: int = EIG_MAX_SWEEPS) -> SymEig:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once in a fixed round-robin
    order; the pairs of one round are disjoint, so their rotations are
    applied together. Pairs whose off-diagonal entry is exactly zero are
    skipped, which keeps exactly decoupled blocks exactly decoupled.

    Args:
        a: Symmetric d x d matrix.
        tol: Stop when the off-diagonal Frobenius norm is at most
            ``tol * ||a||_F``.
        max_sweeps: Hard cap on sweeps.

    Raises:
        DataError: Non-square, non-finite, or non-symmetric input.
        NumericalError: No convergence within ``max_sweeps``.
    """
    A = _check_symmetric(a).copy()
    d = A.shape[0]
    V = np.eye(d)
    target = tol * float(np.linalg.norm(A))
    rounds = _round_robin(d)

    sweeps = 0
    while _off_norm(A) > target:
        if sweeps >= max_sweeps:
            raise NumericalError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {_off_norm(A):.3e}, target {target:.3e})"
            )
        sweeps += 1
        for P, Q in rounds:
            apq = A[P, Q]
            live = apq != 0.0
            if not live.any():
                continue
            P, Q, apq = P[live], Q[live], apq[live]
            tau = (A[Q, Q] - A[P, P]) / (2.0 * apq)
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            cp, cq = A[:, P], A[:, Q]
            A[:, P] = c * cp - s * cq
            A[:, Q] = s * cp + c * cq
            rp, rq = A[P, :], A[Q, :]
            A[P, :] = c[:, None] * rp - s[:, None] * rq
            A[Q, :] = s[:, None] * rp + c[:, None] * rq
            A[P, Q] = 0.0
            A[Q, P] = 0.0

            vp, vq = V[:, P], V[:, Q]
            V[:, P] = c * vp - s * vq
            V[:, Q] = s * vp + c * vq

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    V = V[:, order]
    lead = np.argmax(np.abs(V), axis=0)
    flip = V[lead, np.arange(d)] < 0.0
    V[:, flip] *= -1.0
    return SymEig(eigenvalues=w, eigenvectors=V, sweeps=sweeps)


def _as_vector_stack(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise DataError(f"{name} needs at least one entry")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} input contains non-finite entries")
    return arr


def logsumexp(v, axis: int = -1):
    """log(sum(exp(v))) along ``axis`` via max-shift. Scalar for 1-D input."""
    arr = _as_vector_stack(v, "logsumexp")
    m = np.max(arr, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(arr - m), axis=axis, keepdims=True)) + m
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def softmax(v, axis: int = -1) -> np.ndarray:
    arr = _as_vector_stack(v, "softmax")
    e = np.exp(arr - np.max(arr, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    arr = _as_vector_stack(v, "log_softmax")
    shifted = arr - np.max(arr, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def logistic(z) -> np.ndarray:
    """1 / (1 + exp(-z)) without overflow in either tail."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def regularized_precision(cov, floor_ratio: float = 1e-6) -> np.ndarray:
    """Inverse of a covariance with its spectrum floored.

    Eigenvalues below ``floor_ratio * trace(cov) / d`` are raised to that
    value before inverting. A zero-trace covariance uses a unit scale, so the
    floor becomes ``floor_ratio`` itself.
    """
    if not floor_ratio > 0:
        raise DataError(f"floor_ratio must be > 0, got {floor_ratio}")
    eig = sym_eig(cov)
    d = eig.eigenvalues.shape[0]
    scale = float(np.sum(eig.eigenvalues)) / d
    if scale <= 0.0:
        scale = 1.0
    lam = np.maximum(eig.eigenvalues, floor_ratio * scale)
    V = eig.eigenvectors
    prec = (V / lam) @ V.T
    return 0.5 * (prec + prec.T)


def pseudo_inverse(w) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a k x d matrix through the smaller Gram
    matrix's eigendecomposition."""
    W = as_matrix(w, "weights")
    k, d = W.shape
    small = W @ W.T if k <= d else W.T @ W
    eig = sym_eig(small)
    lam = eig.eigenvalues
    cutoff = max(lam[0], 0.0) * max(k, d) * np.finfo(np.float64).eps * 10.0
    keep = lam > cutoff
    V = eig.eigenvectors[:, keep]
    gram_pinv = (V / lam[keep]) @ V.T
    return W.T @ gram_pinv if k <= d else gram_pinv @ W.T


def nearest_rank_index(percent: float, n: int) -> int:
    """0-based index of the nearest-rank ``percent``-th percentile among ``n``
    ascending values: ceil(percent/100 * n) - 1, at least 0.

    ``percent`` is read through its shortest decimal repr so that e.g. 95
    over 100 values lands exactly on the 95th order statistic.
    """
    if not 0 < percent <= 100:
        raise DataError(f"percentile must be in (0, 100], got {percent}")
    if n < 1:
        raise DataError("percentile of an empty set")
    rank = math.ceil(Fraction(repr(float(percent))) * n / 100)
    return max(rank, 1) - 1


def nearest_rank_percentile(values, percent: float) -> float:
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel(), kind="stable")
    return float(flat[nearest_rank_index(percent, flat.size)])
