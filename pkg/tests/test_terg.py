import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphs import path, random_connected_graph, ring
from hexdrop.hexgrid import HexCoord
from hexdrop.terg import (LaplacianView, RelocationGraph, SpectralTergEmbedding, TergNode,
                          check_prop1, dump_embedding_csv, exact_embedding, random_terg)

A0 = TergNode(HexCoord(0, 0), 0)
B0 = TergNode(HexCoord(1, 0), 0)


def test_record_examples():
    g = RelocationGraph()
    assert g.adjacency().shape == (0, 0)
    g.record_relocation(A0, B0)
    g.record_relocation(B0, A0)
    assert g.weight(A0, B0) == g.weight(B0, A0) == 2

    g.record_relocation(A0, TergNode(HexCoord(0, 0), 1))
    assert g.weight(A0, TergNode(HexCoord(0, 0), 1)) == 1


def test_fresh_graph_is_zero():
    g = RelocationGraph()
    g.node((0, 0), 0)
    assert not g.adjacency().any()


@pytest.mark.parametrize("to", [TergNode(HexCoord(2, 0), 0), TergNode(HexCoord(1, 0), 2)])
def test_non_adjacent_pairs_rejected(to):
    with pytest.raises(ValueError):
        RelocationGraph().record_relocation(A0, to)


def test_node_buckets_by_hour():
    g = RelocationGraph(60)
    assert g.node((1, -1), 59).bucket == 0
    assert g.node((1, -1), 60).bucket == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 2), st.integers(0, 6), st.integers(0, 3)),
                max_size=60))
def test_symmetry_under_any_record_sequence(moves):
    from hexdrop.hexgrid import DIRECTIONS
    g = RelocationGraph()
    for q, r, a, b in moves:
        d = DIRECTIONS[a - 1] if a else (0, 0)
        g.record_relocation(TergNode(HexCoord(q, r), b), TergNode(HexCoord(q + d[0], r + d[1]), b + (a % 2)))
    A = g.adjacency()
    assert np.array_equal(A, A.T) and (A >= 0).all()
    assert not np.diag(A).any()


def test_csv_round_trip(tmp_path):
    g, _ = random_terg(25, seed=3)
    g.dump_csv(tmp_path / "terg.csv")
    back = RelocationGraph.load_csv(tmp_path / "terg.csv")
    order = [back.index[n] for n in g.nodes]
    assert np.array_equal(back.adjacency()[np.ix_(order, order)], g.adjacency())


def test_laplacian_view_invariants():
    A = random_connected_graph(np.random.default_rng(0))
    lap = LaplacianView.from_adjacency(A)
    assert np.array_equal(lap.L, lap.L.T)
    assert np.abs(lap.L.sum(axis=1)).max() == 0
    assert np.array_equal(np.diag(lap.L), A.sum(axis=1))
    with pytest.raises(ValueError):
        LaplacianView.from_adjacency(np.triu(A))


def test_k3_norms_equal():
    # the nonzero eigenvalue of K3 is double, so only D = 2 is basis independent
    A = np.ones((3, 3)) - np.eye(3)
    F = exact_embedding(LaplacianView.from_adjacency(A), 2).embedding
    assert np.allclose(np.linalg.norm(F, axis=1), np.sqrt(2 / 3))


def test_path_hub_is_closest_to_origin():
    # with D = n - 1 every row norm is sqrt(1 - 1/n), so use D = 1
    F = exact_embedding(path([3, 1]), 1).embedding
    n = np.linalg.norm(F, axis=1)
    assert n[1] < n[0] and n[1] < n[2]
    assert np.allclose(np.linalg.norm(exact_embedding(path([3, 1]), 2).embedding, axis=1), np.sqrt(2 / 3))
    assert check_prop1(path([3, 1]), exact_embedding(path([3, 1]), 1)).status == "pass"


def test_isolated_edges_embed_per_component():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = 1
    A[2, 3] = A[3, 2] = 2
    rep = exact_embedding(A, 1)
    assert len(rep.components) == 2
    F = rep.embedding
    assert np.allclose(np.abs(F[:2, 0]), 1 / np.sqrt(2)) and np.allclose(np.abs(F[2:, 0]), 1 / np.sqrt(2))
    for comp, eig in zip(rep.components, rep.eigenvalues):
        assert abs(eig[0]) < 1e-9
        assert np.allclose(F[comp].sum(axis=0), 0)


def test_dimension_bounds():
    with pytest.raises(ValueError):
        exact_embedding(path([1, 1]), 3)
    with pytest.raises(ValueError):
        exact_embedding(path([1, 1]), 0)


def test_orthonormal_and_sign_convention():
    A = random_connected_graph(np.random.default_rng(5), 10, 20)
    rep = exact_embedding(A, 4)
    F = rep.embedding
    assert np.abs(F.T @ F - np.eye(4)).max() < 1e-9
    assert abs(rep.eigenvalues[0][0]) < 1e-9
    for k in range(4):
        nz = F[np.abs(F[:, k]) > 1e-12, k]
        assert nz[0] > 0


def test_ring_is_inconclusive():
    rep = check_prop1(ring(8), exact_embedding(ring(8), 2))
    assert rep.status == "inconclusive"


def test_random_graph_prop1_and_identity():
    rng = np.random.default_rng(11)
    statuses = []
    for _ in range(20):
        A = random_connected_graph(rng, 20, 20)
        rep = check_prop1(A, exact_embedding(A, 3))
        assert rep.identity_ok
        statuses.append(rep.status)
    decided = [s for s in statuses if s != "inconclusive"]
    assert decided and sum(s == "pass" for s in decided) / len(decided) >= 0.9


def test_spectral_transformer_matches_function():
    g, _ = random_terg(30, seed=1)
    est = SpectralTergEmbedding(3).fit(g)
    assert np.array_equal(est.transform([0, 5, 7]), exact_embedding(g, 3).embedding[[0, 5, 7]])
    assert est.get_params() == {"n_components": 3}


def test_random_terg_is_connected_and_sized():
    g, _ = random_terg(40, seed=0)
    assert g.n_nodes == 40
    assert len(exact_embedding(g, 2).components) == 1


def test_embedding_csv(tmp_path):
    g, _ = random_terg(12, seed=2)
    dump_embedding_csv(tmp_path / "e.csv", g, exact_embedding(g, 2).embedding)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "cell_q,cell_r,bucket,norm,f0,f1" and len(lines) == 13
