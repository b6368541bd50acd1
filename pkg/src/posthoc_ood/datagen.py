"""Synthetic ID/OOD feature sets with known structure, and one-class splits.

ID features live near class centroids inside the span of the first
``intrinsic_dim`` coordinate axes, plus a small off-subspace component. The
classifier head is the equal-covariance linear discriminant divided by
``noise * separation`` (keeps logits O(separation / noise) rather than
O(separation**2), so softmax does not saturate); it only reads the
in-subspace coordinates. Two OOD sets are generated:

* ``shifted``: each class centroid moved by ``ood_shift`` along a direction
  that points back through the origin and partly off the subspace.
* ``off_subspace``: ID centroids, but off-subspace noise of scale
  ``ood_off_noise`` instead of ``off_subspace_noise``.

All randomness comes from a Philox counter-based stream seeded by
``seed``; Gaussians are drawn with Box-Muller on that stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .fitstats import LinearHead


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 3
    feature_dim: int = 16
    intrinsic_dim: int = 8
    samples_per_class: int = 334
    separation: float = 10.0  # norm of each class centroid
    noise: float = 1.0  # in-subspace std
    off_subspace_noise: float = 0.1
    ood_shift: float = 20.0
    ood_off_noise: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 1:
            raise DataError(f"num_classes must be >= 1, got {self.num_classes}")
        if not 1 <= self.intrinsic_dim <= self.feature_dim:
            raise DataError(
                f"intrinsic_dim must be in [1, feature_dim={self.feature_dim}], got {self.intrinsic_dim}"
            )
        if self.samples_per_class < 1:
            raise DataError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        for name in ("separation", "noise", "off_subspace_noise", "ood_shift", "ood_off_noise"):
            if not getattr(self, name) >= 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.seed < 2**64:
            raise DataError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class Split:
    features: np.ndarray
    logits: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class SynthData:
    spec: SynthSpec
    head: LinearHead
    centroids: np.ndarray
    train: Split
    test: Split
    ood: dict[str, Split] = field(default_factory=dict)


class _GaussianStream:
    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.Philox(seed))

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def normal(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log1p(-u[:pairs]))  # 1 - u in (0, 1]
        angle = 2.0 * np.pi * u[pairs:]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n].reshape(shape)


def _directions(spec: SynthSpec, stream: _GaussianStream) -> np.ndarray:
    C, d, D = spec.num_classes, spec.feature_dim, spec.intrinsic_dim
    g = np.zeros((C, d))
    if C <= D:
        g[np.arange(C), np.arange(C)] = 1.0
    else:
        raw = stream.normal((C, D))
        g[:, :D] = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return g


def _sample(stream, spec, centers, labels, off_scale) -> np.ndarray:
    D = spec.intrinsic_dim
    n = labels.shape[0]
    x = centers[labels].copy()
    x[:, :D] += spec.noise * stream.normal((n, D))
    if spec.feature_dim > D:
        x[:, D:] += off_scale * stream.normal((n, spec.feature_dim - D))
    return x


def synth_dataset(spec: SynthSpec) -> SynthData:
    spec.validate()
    stream = _GaussianStream(spec.seed)
    C, d, D = spec.num_classes, spec.feature_dim, spec.intrinsic_dim

    g = _directions(spec, stream)
    centroids = spec.separation * g
    kappa = 1.0 / max(spec.noise * max(spec.separation, spec.noise), 1e-12)
    head = LinearHead(
        weights=kappa * centroids,
        bias=-0.5 * kappa * np.sum(centroids * centroids, axis=1),
    )

    shift_dir = -g.copy()
    if d > D:
        shift_dir[:, D] += 1.0
        shift_dir /= math.sqrt(2.0)
    shifted_centroids = centroids + spec.ood_shift * shift_dir

    labels = np.repeat(np.arange(C), spec.samples_per_class)

    def split(centers, off_scale) -> Split:
        x = _sample(stream, spec, centers, labels, off_scale)
        return Split(features=x, logits=head.logits(x), labels=labels.copy())

    train = split(centroids, spec.off_subspace_noise)
    test = split(centroids, spec.off_subspace_noise)
    ood = {
        "shifted": split(shifted_centroids, spec.off_subspace_noise),
        "off_subspace": split(centroids, spec.ood_off_noise),
    }
    return SynthData(spec=spec, head=head, centroids=centroids, train=train, test=test, ood=ood)


@dataclass(frozen=True)
class OneClassTask:
    id_class: int
    id_rows: np.ndarray
    ood_rows: np.ndarray

    @property
    def degenerate(self) -> bool:
        return self.ood_rows.size == 0


def one_class_split(labels, id_class: int) -> OneClassTask:
    """Rows of ``id_class`` are ID, every other row is OOD."""
    lab = np.asarray(labels).reshape(-1)
    id_mask = lab == id_class
    if not id_mask.any():
        raise DataError(f"class {id_class} does not occur in the labels")
    return OneClassTask(
        id_class=int(id_class),
        id_rows=np.flatnonzero(id_mask),
        ood_rows=np.flatnonzero(~id_mask),
    )


def one_class_tasks(labels) -> list[OneClassTask]:
    return [one_class_split(labels, int(k)) for k in np.unique(np.asarray(labels))]
