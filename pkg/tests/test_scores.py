import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from posthoc_ood.errors import DataError, UsageError
from posthoc_ood.fitstats import (
    ClassStats,
    KlTemplates,
    LinearHead,
    PrincipalSubspace,
    ReactParams,
    VimParams,
)
from posthoc_ood.metrics import auroc
from posthoc_ood.scores import (
    SCORE_NAMES,
    score_batch,
    score_energy,
    score_kl_matching,
    score_mahalanobis,
    score_maxlogit,
    score_msp,
    score_react,
    score_residual,
    score_vim,
)


def _subspace(R, u=None):
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    return PrincipalSubspace(origin=np.zeros(d) if u is None else np.asarray(u, float),
                             residual_basis=R, principal_dim=d - R.shape[1])


def test_msp_examples():
    assert score_msp([[0.0, 0.0]]).values[0] == -0.5
    assert score_msp([[math.log(1), math.log(3)]]).values[0] == pytest.approx(-0.75, abs=1e-15)
    with pytest.raises(DataError):
        score_msp([[1.0]])


def test_maxlogit_examples():
    assert score_maxlogit([[1.0, 3.0]]).values[0] == -3.0
    assert score_maxlogit([[-5.0]]).values[0] == 5.0


def test_energy_examples():
    assert score_energy([[0.0, 0.0]]).values[0] == pytest.approx(-math.log(2), abs=1e-15)
    assert score_energy([[1000.0, 1000.0]]).values[0] == -(1000.0 + math.log(2))


def test_kl_examples():
    T = KlTemplates(class_dists=np.array([[0.25, 0.75], [0.5, 0.5]]))
    assert score_kl_matching([[0.0, 0.0]], T).values[0] == 0.0
    single = KlTemplates(class_dists=np.array([[0.25, 0.75]]))
    # oracle: 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
    assert score_kl_matching([[0.0, 0.0]], single).values[0] == pytest.approx(
        0.14384103622589042, abs=1e-12)


def test_kl_finite_under_extreme_logits():
    T = KlTemplates(class_dists=np.array([[1e-300, 1.0 - 1e-300]]))
    v = score_kl_matching([[1e4, -1e4]], T).values
    assert np.isfinite(v[0]) and v[0] > 0


def test_mahalanobis_examples():
    I = ClassStats(centroids=np.zeros((1, 2)), shared_precision=np.eye(2), class_counts=np.array([1]))
    assert score_mahalanobis([[3.0, 4.0]], I).values[0] == 25.0
    P = ClassStats(centroids=np.zeros((1, 2)), shared_precision=np.diag([0.5, 0.125]),
                   class_counts=np.array([1]))
    assert score_mahalanobis([[2.0, 4.0]], P).values[0] == 4.0
    two = ClassStats(centroids=np.array([[1.0, 2.0], [5.0, 5.0]]), shared_precision=np.eye(2),
                     class_counts=np.array([1, 1]))
    assert score_mahalanobis([[5.0, 5.0]], two).values[0] == 0.0
    with pytest.raises(DataError):
        score_mahalanobis([[1.0, 2.0, 3.0]], two)


def test_residual_examples():
    sub = _subspace([[0.0], [1.0]])
    assert score_residual([[3.0, 4.0]], sub).values[0] == 4.0
    assert score_residual([[0.0, 0.0]], _subspace([[0.0], [1.0]], [0.0, 0.0])).values[0] == 0.0
    shifted = _subspace([[0.0], [1.0]], [1.0, 7.0])
    assert score_residual([[1.0, 7.0]], shifted).values[0] == 0.0
    empty = _subspace(np.zeros((2, 0)))
    assert score_residual([[3.0, 4.0], [1.0, 1.0]], empty).values.tolist() == [0.0, 0.0]
    with pytest.raises(DataError):
        score_residual([[1.0, 2.0, 3.0]], sub)


def test_react_examples(rng):
    head = LinearHead(np.array([[1.0]]), np.array([0.0]))
    assert score_react([[5.0]], head, ReactParams(3.0, 90.0)).values[0] == -3.0

    W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    head = LinearHead(W, b)
    X = rng.standard_normal((10, 4))
    inactive = score_react(X, head, ReactParams(float(X.max()) + 1, 90.0)).values
    assert np.allclose(inactive, score_energy(head.logits(X)).values, atol=1e-9)

    full = score_react(np.abs(X), head, ReactParams(0.0, 90.0)).values
    lse_b = math.log(np.sum(np.exp(b)))
    assert np.allclose(full, -lse_b, atol=1e-12)

    with pytest.raises(DataError, match="ReAct requires head weights"):
        score_react(X, None, ReactParams(1.0, 90.0))


def test_vim_examples():
    zero = VimParams(alpha=1.0, subspace=_subspace([[0.0], [1.0]]))
    assert score_vim([[3.0, 0.0]], [[0.0, 0.0]], zero).values[0] == pytest.approx(1 / 3, abs=1e-15)
    v = score_vim([[0.0, math.log(2)]], [[0.0, 0.0]], zero).values[0]
    assert v == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DataError):
        score_vim([[0.0, 0.0, 0.0]], [[0.0, 0.0]], zero)


@given(arrays(np.float64, (6, 3), elements=st.floats(-20, 20)))
def test_score_ranges(L):
    msp = score_msp(L).values
    assert np.all((msp >= -1.0) & (msp <= -1 / 3 + 1e-15))
    T = KlTemplates(class_dists=np.array([[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]]))
    assert np.all(score_kl_matching(L, T).values >= 0.0)


@given(arrays(np.float64, (6, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (6, 2), elements=st.floats(-5, 5)))
def test_vim_open_interval_below_saturation(X, L):
    vim = VimParams(alpha=1.0, subspace=_subspace([[0.0], [1.0]]))
    v = score_vim(X, L, vim).values
    assert np.all((v > 0.0) & (v < 1.0))


@given(arrays(np.float64, (6, 2), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (6, 2), elements=st.floats(-1e3, 1e3)))
def test_vim_closed_interval_general(X, L):
    vim = VimParams(alpha=3.0, subspace=_subspace([[0.0], [1.0]]))
    v = score_vim(X, L, vim).values
    assert np.all((v >= 0.0) & (v <= 1.0))


def test_msp_auroc_invariant_to_row_shift(rng):
    id_l, ood_l = 2 * rng.standard_normal((50, 4)), rng.standard_normal((40, 4))
    base = auroc(score_msp(id_l).values, score_msp(ood_l).values)
    shifted = auroc(score_msp(id_l + 1000 * rng.choice([-1, 1], (50, 1))).values,
                    score_msp(ood_l + 1000 * rng.choice([-1, 1], (40, 1))).values)
    assert shifted == base


def test_energy_auroc_invariant_to_global_shift(rng):
    id_l, ood_l = 2 * rng.standard_normal((50, 4)), rng.standard_normal((40, 4))
    base = auroc(score_energy(id_l).values, score_energy(ood_l).values)
    assert auroc(score_energy(id_l + 7.0).values, score_energy(ood_l + 7.0).values) == base


def test_mahalanobis_rotation_invariance(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    B = rng.standard_normal((4, 4))
    stats = ClassStats(centroids=rng.standard_normal((3, 4)), shared_precision=B @ B.T + np.eye(4),
                       class_counts=np.ones(3, dtype=int))
    rot = ClassStats(centroids=stats.centroids @ Q.T, shared_precision=Q @ stats.shared_precision @ Q.T,
                     class_counts=stats.class_counts)
    X = rng.standard_normal((20, 4))
    a = score_mahalanobis(X, stats).values
    b = score_mahalanobis(X @ Q.T, rot).values
    assert np.allclose(a, b, atol=1e-8 * max(1.0, np.abs(a).max()))


def test_batch_equals_rowwise(small_data, small_stats):
    X, L = small_data.test.features[:12], small_data.test.logits[:12]
    for name in SCORE_NAMES:
        batch = score_batch(name, X, L, small_stats).values
        rows = [score_batch(name, X[i:i + 1], L[i:i + 1], small_stats).values[0] for i in range(12)]
        # BLAS kernels round differently for 1-row and n-row products
        assert np.allclose(batch, rows, rtol=1e-12, atol=1e-14), name


def test_every_score_finite_on_batch(small_data, small_stats):
    X, L = small_data.test.features[:10], small_data.test.logits[:10]
    for name in SCORE_NAMES:
        out = score_batch(name, X, L, small_stats)
        assert out.score_name == name and len(out) == 10
        assert np.all(np.isfinite(out.values))


def test_orientation_on_constructed_ood(small_data, small_stats):
    # shifted OOD sits away from every centroid; off-subspace OOD leaves the principal span
    id_x, id_l = small_data.test.features, small_data.test.logits
    for name, ood in [("mahalanobis", "shifted"), ("residual", "off_subspace"), ("vim", "off_subspace")]:
        o = small_data.ood[ood]
        a = score_batch(name, id_x, id_l, small_stats).values.mean()
        b = score_batch(name, o.features, o.logits, small_stats).values.mean()
        assert b > a, name
    flat = np.zeros((10, 3))
    for name in ("msp", "kl_matching"):
        a = score_batch(name, None, id_l, small_stats).values.mean()
        b = score_batch(name, None, flat, small_stats).values.mean()
        assert b > a, name


def test_dispatch_matches_direct(small_data, small_stats):
    L = small_data.test.logits
    assert np.array_equal(score_batch("energy", None, L, small_stats).values, score_energy(L).values)


def test_dispatch_errors(small_data, small_stats):
    L = small_data.test.logits
    with pytest.raises(UsageError, match="odin.*unsupported"):
        score_batch("odin", None, L, small_stats)
    with pytest.raises(UsageError, match="valid names: msp"):
        score_batch("entropy", None, L, small_stats)
    with pytest.raises(DataError, match="requires logits"):
        score_batch("vim", small_data.test.features, None, small_stats)
    with pytest.raises(DataError, match="requires features"):
        score_batch("mahalanobis", None, L, small_stats)
