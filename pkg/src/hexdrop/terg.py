"""Time-expanded relocation graph and its exact Laplacian embedding."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .hexgrid import HexCoord, hex_distance


class TergNode(NamedTuple):
    cell: HexCoord
    bucket: int


class RelocationGraph:
    """Undirected counts of relocation trips between (cell, time bucket) states."""

    def __init__(self, bucket_width: int = 60):
        if bucket_width < 1:
            raise ValueError("bucket_width must be >= 1")
        self.bucket_width = bucket_width
        self.index: dict[TergNode, int] = {}
        self.nodes: list[TergNode] = []
        self._adj: dict[int, dict[int, int]] = defaultdict(dict)

    def node(self, cell, tick: int) -> TergNode:
        return TergNode(HexCoord(*cell), tick // self.bucket_width)

    def _id(self, n: TergNode) -> int:
        i = self.index.get(n)
        if i is None:
            i = self.index[n] = len(self.nodes)
            self.nodes.append(n)
        return i

    def record_relocation(self, frm: TergNode, to: TergNode):
        """Add one trip between two states.

        The cells must be equal or neighbors and the buckets at most one
        apart.  A trip that stays on the very same node changes no Laplacian
        entry and is ignored.
        """
        frm, to = TergNode(HexCoord(*frm[0]), int(frm[1])), TergNode(HexCoord(*to[0]), int(to[1]))
        if hex_distance(frm.cell, to.cell) > 1 or abs(frm.bucket - to.bucket) > 1:
            raise ValueError(f"{frm} and {to} are not adjacent")
        if frm == to:
            return
        a, b = self._id(frm), self._id(to)
        self._adj[a][b] = self._adj[a].get(b, 0) + 1
        self._adj[b][a] = self._adj[b].get(a, 0) + 1

    def record_leg(self, grid, leg):
        """Record a relocation-leg transition emitted by the simulator."""
        self.record_relocation(self.node(grid.cells[leg.start_cell], leg.start_tick),
                               self.node(grid.cells[leg.end_cell], leg.end_tick))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def weight(self, a: TergNode, b: TergNode) -> int:
        i, j = self.index.get(a), self.index.get(b)
        if i is None or j is None:
            return 0
        return self._adj[i].get(j, 0)

    def adjacency(self) -> np.ndarray:
        n = self.n_nodes
        A = np.zeros((n, n))
        for i, row in self._adj.items():
            for j, w in row.items():
                A[i, j] = w
        return A

    def edges(self):
        for i, row in sorted(self._adj.items()):
            for j, w in sorted(row.items()):
                if i < j:
                    yield self.nodes[i], self.nodes[j], w

    def snapshot(self) -> "RelocationGraph":
        g = RelocationGraph(self.bucket_width)
        g.index = dict(self.index)
        g.nodes = list(self.nodes)
        g._adj = defaultdict(dict, {k: dict(v) for k, v in self._adj.items()})
        return g

    @classmethod
    def from_adjacency(cls, A, nodes=None, bucket_width: int = 60) -> "RelocationGraph":
        """Build a graph from a dense symmetric matrix (no adjacency rule checks)."""
        A = np.asarray(A)
        n = A.shape[0]
        g = cls(bucket_width)
        nodes = nodes or [TergNode(HexCoord(i, 0), 0) for i in range(n)]
        for node in nodes:
            g._id(TergNode(HexCoord(*node[0]), int(node[1])))
        for i in range(n):
            for j in range(n):
                if i != j and A[i, j]:
                    g._adj[i][j] = A[i, j]
        return g

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_cell_q", "node_cell_r", "bucket",
                        "peer_cell_q", "peer_cell_r", "peer_bucket", "weight"])
            for a, b, wt in self.edges():
                w.writerow([a.cell.q, a.cell.r, a.bucket, b.cell.q, b.cell.r, b.bucket, wt])

    @classmethod
    def load_csv(cls, path, bucket_width: int = 60) -> "RelocationGraph":
        g = cls(bucket_width)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                a = TergNode(HexCoord(int(row["node_cell_q"]), int(row["node_cell_r"])), int(row["bucket"]))
                b = TergNode(HexCoord(int(row["peer_cell_q"]), int(row["peer_cell_r"])), int(row["peer_bucket"]))
                i, j = g._id(a), g._id(b)
                w = int(float(row["weight"]))
                g._adj[i][j] = g._adj[i].get(j, 0) + w
                g._adj[j][i] = g._adj[j].get(i, 0) + w
        return g


@dataclass
class LaplacianView:
    L: np.ndarray
    degree: np.ndarray

    @classmethod
    def from_adjacency(cls, A) -> "LaplacianView":
        A = np.asarray(A, dtype=np.float64)
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        A = A - np.diag(np.diag(A))
        deg = A.sum(axis=1)
        return cls(np.diag(deg) - A, deg)

    @classmethod
    def from_graph(cls, graph: RelocationGraph) -> "LaplacianView":
        return cls.from_adjacency(graph.adjacency())

    @property
    def adjacency(self) -> np.ndarray:
        return np.diag(self.degree) - self.L


@dataclass
class EmbeddingReport:
    embedding: np.ndarray            # (n_nodes, D)
    components: list                 # list of node-index arrays
    eigenvalues: list                # per component, ascending, including the zero one
    truncated: list = field(default_factory=list)  # components with fewer than D+1 nodes


def _fix_signs(V: np.ndarray) -> np.ndarray:
    for k in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, k]) > 1e-12)
        if nz.size and V[nz[0], k] < 0:
            V[:, k] = -V[:, k]
    return V


def exact_embedding(lap, D: int) -> EmbeddingReport:
    """Bottom-``D`` non-constant Laplacian eigenvectors, per connected component.

    ``lap`` is a :class:`LaplacianView`, a :class:`RelocationGraph` or a dense
    adjacency matrix.  Each component is embedded on its own; components with
    ``D`` or fewer nodes get the eigenvectors they have and zeros elsewhere.
    Signs are fixed so the first nonzero entry of each vector is positive.
    """
    if isinstance(lap, RelocationGraph):
        lap = LaplacianView.from_graph(lap)
    elif not isinstance(lap, LaplacianView):
        lap = LaplacianView.from_adjacency(lap)
    n = lap.L.shape[0]
    if D < 1 or D >= n:
        raise ValueError(f"D={D} must be in 1..{n - 1} for {n} nodes")
    A = lap.adjacency
    n_comp, labels = connected_components(A != 0, directed=False)
    emb = np.zeros((n, D))
    comps, eigs, truncated = [], [], []
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        comps.append(idx)
        Lc = lap.L[np.ix_(idx, idx)]
        w, V = np.linalg.eigh(Lc)
        eigs.append(w)
        k = min(D, len(idx) - 1)
        if k < D:
            truncated.append(c)
        if k > 0:
            emb[idx, :k] = _fix_signs(V[:, 1:k + 1].copy())
    return EmbeddingReport(emb, comps, eigs, truncated)


class SpectralTergEmbedding(TransformerMixin, BaseEstimator):
    """Exact Laplacian embedding as a transformer over node indices.

    ``fit`` takes a symmetric adjacency matrix (or a RelocationGraph);
    ``transform`` maps an array of node indices to their ``D`` coordinates.
    """

    def __init__(self, n_components: int = 8):
        self.n_components = n_components

    def fit(self, X, y=None):
        if isinstance(X, RelocationGraph):
            X = X.adjacency()
        rep = exact_embedding(LaplacianView.from_adjacency(X), self.n_components)
        self.embedding_ = rep.embedding
        self.components_ = rep.components
        self.eigenvalues_ = rep.eigenvalues
        return self

    def transform(self, X):
        check_is_fitted(self, "embedding_")
        idx = np.asarray(X, dtype=np.int64).ravel()
        return self.embedding_[idx]


@dataclass
class Prop1Report:
    status: str          # "pass" | "fail" | "inconclusive"
    max_node: int = -1
    min_node: int = -1
    max_norm: float = float("nan")
    min_norm: float = float("nan")
    identity_pairs: int = 0
    identity_ok: bool = True


def check_prop1(lap, embedding, tol: float = 1e-12) -> Prop1Report:
    """Does the node with most relocation trips sit closest to the origin?

    Compares the max- and min-weighted-degree nodes (both must be unique,
    otherwise the check is inconclusive) and verifies, for every ordered pair
    with ``L_yy > L_xx``, that swapping their embedding norms lowers the
    drawing energy exactly when ``|f(x)| <= |f(y)|``.
    """
    if isinstance(lap, RelocationGraph):
        lap = LaplacianView.from_graph(lap)
    elif not isinstance(lap, LaplacianView):
        lap = LaplacianView.from_adjacency(lap)
    F = embedding.embedding if isinstance(embedding, EmbeddingReport) else np.asarray(embedding)
    norms2 = (F ** 2).sum(axis=1)
    deg = np.diag(lap.L)

    # exchange identity: (Lyy - Lxx)(|fy|^2 - |fx|^2) >= 0  <=>  |fx| <= |fy|
    dx = deg[:, None]
    dy = deg[None, :]
    fx2 = norms2[:, None]
    fy2 = norms2[None, :]
    pairs = dy > dx
    lhs = dx * fy2 + dy * fx2
    rhs = dx * fx2 + dy * fy2
    scale = np.maximum(1.0, np.abs(rhs))
    swapped_le = lhs <= rhs + tol * scale
    closer = fx2 <= fy2 + tol * np.maximum(1.0, fy2)
    identity_ok = bool(np.all(swapped_le[pairs] == closer[pairs])) if pairs.any() else True

    x = int(np.argmax(deg))
    y = int(np.argmin(deg))
    rep = Prop1Report("inconclusive", x, y, float(np.sqrt(norms2[x])), float(np.sqrt(norms2[y])),
                      int(pairs.sum()), identity_ok)
    if deg[x] == deg[y] or (deg == deg[x]).sum() > 1 or (deg == deg[y]).sum() > 1:
        return rep
    rep.status = "pass" if norms2[x] < norms2[y] else "fail"
    return rep


def dump_embedding_csv(path, graph: RelocationGraph, F):
    F = np.asarray(F)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_q", "cell_r", "bucket", "norm"] + [f"f{i}" for i in range(F.shape[1])])
        for i, n in enumerate(graph.nodes):
            w.writerow([n.cell.q, n.cell.r, n.bucket, float(np.linalg.norm(F[i]))] + list(map(float, F[i])))


def random_terg(n_nodes: int, seed: int = 0, radius: int = 2, n_buckets: int = 3,
                bucket_width: int = 60, step_ticks: int = 20):
    """Seeded connected TERG grown from random relocation walks.

    Returns ``(graph, grid)``.  Walks favour a few cells so the weighted
    degrees are uneven; every recorded trip touches an existing node, which
    keeps the graph connected.
    """
    from .hexgrid import GridSpec, HexGrid

    grid = HexGrid(GridSpec(radius=radius))
    rng = np.random.default_rng(seed)
    g = RelocationGraph(bucket_width)
    horizon = n_buckets * bucket_width
    pull = rng.gamma(0.5, size=grid.n_cells) + 0.05
    while g.n_nodes < n_nodes:
        cell = int(rng.integers(grid.n_cells)) if g.n_nodes == 0 else \
            grid.cell_index(g.nodes[int(rng.integers(g.n_nodes))].cell)
        tick = int(rng.integers(horizon))
        for _ in range(int(rng.integers(2, 8))):
            nbrs = grid.neighbor_table[cell]
            p = pull[nbrs] / pull[nbrs].sum()
            nxt = int(nbrs[rng.choice(7, p=p)])
            t2 = min(tick + step_ticks, horizon - 1)
            a, b = g.node(grid.cells[cell], tick), g.node(grid.cells[nxt], t2)
            new = (a not in g.index) + (b not in g.index and b != a)
            if g.n_nodes and (a not in g.index and b not in g.index):
                break
            if g.n_nodes + new > n_nodes:
                break
            g.record_relocation(a, b)
            cell, tick = nxt, t2
    return g, grid


def node_local_features(graph: RelocationGraph, grid, episode_ticks: int) -> np.ndarray:
    """``[t/T, one-hot cell]`` at each node's bucket midpoint."""
    X = np.zeros((graph.n_nodes, 1 + grid.n_cells))
    for i, n in enumerate(graph.nodes):
        X[i, 0] = (n.bucket * graph.bucket_width + graph.bucket_width / 2) / episode_ticks
        X[i, 1 + grid.cell_index(n.cell)] = 1.0
    return X
