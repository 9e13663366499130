import numpy as np
import pytest

from gradcheck import graph_loss_error
from hexdrop.laplace import (EmbedTrainConfig, LaplacianRepresentation, RandomRepresentation,
                             attract_loss, compare_exact, graph_drawing_loss, graph_training_pairs,
                             repulse_loss, train_embedding)
from hexdrop.terg import exact_embedding


def test_attract_examples():
    assert attract_loss([[1.0, 2.0]], [[1.0, 2.0]]) == 0
    assert attract_loss([[0.0]], [[2.0]]) == 2
    assert attract_loss([[1.0, 0.0]], [[0.0, 1.0]]) == 1
    with pytest.raises(ValueError):
        attract_loss([[1.0]], [[1.0, 2.0]])


def test_repulse_examples():
    assert repulse_loss([[1.0]], [[1.0]]) == 0
    assert repulse_loss([[0.0]], [[0.0]]) == 1
    assert repulse_loss([[1.0, 0.0]], [[1.0, 0.0]]) == 1


def test_repulse_matches_double_sum():
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    I = np.eye(3)
    brute = np.mean([((np.outer(a, a) - I) * (np.outer(b, b) - I)).sum() for a, b in zip(u, v)])
    assert repulse_loss(u, v) == pytest.approx(brute, rel=1e-12)


def test_repulse_zero_on_orthonormal_statistic():
    D = 4
    E = np.sqrt(D) * np.eye(D)          # E[f f^T] = I under the uniform state distribution
    u = np.repeat(E, D, axis=0)
    v = np.tile(E, (D, 1))
    assert repulse_loss(u, v) == pytest.approx(0.0, abs=1e-12)


def test_ordered_loss_is_sum_of_prefix_losses():
    rng = np.random.default_rng(1)
    fs, fn, fu, fv = (rng.normal(size=(6, 4)) for _ in range(4))
    total = sum(graph_drawing_loss(fs[:, :k], fn[:, :k], fu[:, :k], fv[:, :k], 0.7)[0] for k in range(1, 5))
    assert graph_drawing_loss(fs, fn, fu, fv, 0.7, ordered=True)[0] == pytest.approx(total)


@pytest.mark.parametrize("ordered", [False, True])
def test_composite_loss_gradients(ordered):
    rng = np.random.default_rng(2)
    assert max(graph_loss_error(rng, ordered) for _ in range(5)) < 1e-4


def test_attract_only_collapses_pair():
    x = np.array([[1.0, 0.0, 0.0]])
    xn = np.array([[0.0, 1.0, 0.0]])
    phi = LaplacianRepresentation(2, hidden=(8,), lam=0.0, batch_size=4, steps=400, lr=1e-2)
    before = np.linalg.norm(np.diff(LaplacianRepresentation(2, hidden=(8,)).fit(x, xn).transform(np.vstack([x, xn])), axis=0))
    phi.fit(np.repeat(x, 4, 0), np.repeat(xn, 4, 0))
    after = np.linalg.norm(np.diff(phi.transform(np.vstack([x, xn])), axis=0))
    assert after < 1e-2 and after < before


def _two_cliques(k=5):
    n = 2 * k
    A = np.zeros((n, n))
    A[:k, :k] = 1
    A[k:, k:] = 1
    np.fill_diagonal(A, 0)
    A[k - 1, k] = A[k, k - 1] = 1
    return A


def test_two_cluster_graph_separates():
    A = _two_cliques()
    X = np.eye(len(A))
    rng = np.random.default_rng(0)
    Xs, Xn, marg = graph_training_pairs(A, X, 4000, rng, rho="uniform")
    phi = LaplacianRepresentation(2, hidden=(32,), steps=3000, random_state=0).fit(Xs, Xn, marg)
    F = phi.transform(X)
    d = np.linalg.norm(F[:, None] - F[None], axis=-1)
    same = np.equal.outer(np.arange(10) < 5, np.arange(10) < 5)
    off = ~np.eye(10, dtype=bool)
    assert d[same & off].mean() < d[~same].mean()
    E = exact_embedding(A, 2).embedding
    de = np.linalg.norm(E[:, None] - E[None], axis=-1)
    assert de[same & off].mean() < de[~same].mean()


def test_fixed_seed_is_bit_identical():
    rng = np.random.default_rng(0)
    X, Xn = rng.random((50, 6)), rng.random((50, 6))
    a = LaplacianRepresentation(3, hidden=(16,), steps=50, random_state=4).fit(X, Xn)
    b = LaplacianRepresentation(3, hidden=(16,), steps=50, random_state=4).fit(X, Xn)
    assert a.net_ == b.net_
    assert a.transform(X).shape == (50, 3) and a.full_output(X).shape == (50, 4)


def test_loss_trend_is_non_increasing():
    A = _two_cliques(6)
    X = np.eye(len(A))
    Xs, Xn, marg = graph_training_pairs(A, X, 3000, np.random.default_rng(1))
    phi = LaplacianRepresentation(3, hidden=(32,), steps=3000, random_state=1).fit(Xs, Xn, marg)
    h = np.array(phi.loss_history_)
    ma = np.convolve(h, np.ones(500) / 500, mode="valid")
    ends = ma[::500]
    assert all(b <= a + 0.05 * abs(a) for a, b in zip(ends, ends[1:]))


def test_compare_exact_examples():
    A = _two_cliques()
    E = exact_embedding(A, 3).embedding
    assert compare_exact(E, A).correlation == pytest.approx(1.0)
    res = compare_exact(np.ones((10, 3)), A)
    assert res.degenerate and res.correlation == 0.0


def test_train_embedding_needs_a_batch():
    with pytest.raises(ValueError):
        train_embedding([], EmbedTrainConfig(batch_size=32))
    with pytest.raises(ValueError):
        EmbedTrainConfig(lam=-1)


def test_random_representation_in_unit_interval():
    r = RandomRepresentation(8, random_state=0).fit()
    F = r.transform(np.zeros((100, 3)))
    assert F.shape == (100, 8) and F.min() >= 0 and F.max() <= 1
    assert not np.array_equal(F, r.transform(np.zeros((100, 3))))
