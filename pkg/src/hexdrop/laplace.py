"""Neural approximation of the relocation-graph Laplacian embedding.

The network is trained on the sampled graph-drawing objective

    G(f) = 1/2 E_(s,s') |f(s) - f(s')|^2  +  lam * E_(s,s'~rho) sum_ij
           (f_i(s) f_j(s) - d_ij) (f_i(s') f_j(s') - d_ij)

where ``(s, s')`` are consecutive states of relocation legs and the
repulsive pairs are drawn independently from the states seen in the buffer.
With ``ordered=True`` the objective is summed over the leading ``k``
outputs for every ``k``, which pins output ``k`` to the ``k``-th eigenvector
(output 0 to the constant one) instead of an arbitrary rotation of the
bottom eigenspace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .nn import Adam, DenseNet
from .sim import local_features, state_features
from .terg import LaplacianView, exact_embedding


def attract_loss(fs, fs_next):
    fs = np.asarray(fs, dtype=np.float64)
    fs_next = np.asarray(fs_next, dtype=np.float64)
    if fs.shape != fs_next.shape:
        raise ValueError(f"shape mismatch {fs.shape} vs {fs_next.shape}")
    return 0.5 * float(((fs - fs_next) ** 2).sum(axis=-1).mean())


def repulse_loss(fu, fv):
    """Batch mean of sum_ij (u_i u_j - d_ij)(v_i v_j - d_ij) over independent pairs."""
    fu = np.atleast_2d(np.asarray(fu, dtype=np.float64))
    fv = np.atleast_2d(np.asarray(fv, dtype=np.float64))
    if fu.shape != fv.shape:
        raise ValueError(f"shape mismatch {fu.shape} vs {fv.shape}")
    D = fu.shape[1]
    dot = (fu * fv).sum(axis=1)
    per = dot ** 2 - (fu ** 2).sum(axis=1) - (fv ** 2).sum(axis=1) + D
    return float(per.mean())


def graph_drawing_loss(fs, fs_next, fu, fv, lam=1.0, ordered=False):
    """Loss value and gradients w.r.t. each of the four embedding batches."""
    fs, fs_next, fu, fv = (np.atleast_2d(np.asarray(a, dtype=np.float64))
                           for a in (fs, fs_next, fu, fv))
    n, D = fs.shape
    m = fu.shape[0]
    # weight of dimension i = how many prefix objectives include it
    w = np.arange(D, 0, -1, dtype=np.float64) if ordered else np.ones(D)

    diff = fs - fs_next
    att = 0.5 * float((w * diff ** 2).sum() / n)
    g_s = w * diff / n
    g_next = -g_s

    if ordered:
        c = np.cumsum(fu * fv, axis=1)                 # prefix dot products
        pu = np.cumsum(fu ** 2, axis=1)
        pv = np.cumsum(fv ** 2, axis=1)
        ks = np.arange(1, D + 1)
        rep = float((c ** 2 - pu - pv + ks).sum() / m)
        tail = np.cumsum(c[:, ::-1], axis=1)[:, ::-1]  # sum_{k>=i} c_k
        g_u = (2 * tail * fv - 2 * w * fu) / m
        g_v = (2 * tail * fu - 2 * w * fv) / m
    else:
        dot = (fu * fv).sum(axis=1, keepdims=True)
        rep = float((dot[:, 0] ** 2 - (fu ** 2).sum(1) - (fv ** 2).sum(1) + D).mean())
        g_u = (2 * dot * fv - 2 * fu) / m
        g_v = (2 * dot * fu - 2 * fv) / m
    return att + lam * rep, (g_s, g_next, lam * g_u, lam * g_v)


@dataclass
class EmbedTrainConfig:
    lam: float = 1.0
    batch_size: int = 32
    lr: float = 1e-3
    steps: int = 2000
    ordered: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


class LaplacianRepresentation(TransformerMixin, BaseEstimator):
    """Learn ``phi(s)`` whose last ``n_components`` outputs embed the graph.

    Parameters
    ----------
    n_components : int
        Embedding dimension ``D``; the network has ``D + 1`` outputs.
    hidden : tuple of int
    lam : float
        Weight of the repulsive (orthonormality) term.
    batch_size, lr, steps : training schedule.
    ordered : bool
        Use the prefix-summed objective that orders the output dimensions.
    random_state : int
    """

    def __init__(self, n_components=8, hidden=(512, 128), lam=1.0, batch_size=32,
                 lr=1e-3, steps=2000, ordered=True, random_state=0):
        self.n_components = n_components
        self.hidden = hidden
        self.lam = lam
        self.batch_size = batch_size
        self.lr = lr
        self.steps = steps
        self.ordered = ordered
        self.random_state = random_state

    def _init(self, n_features):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        rng = np.random.default_rng(self.random_state)
        self.net_ = DenseNet([n_features, *self.hidden, self.n_components + 1], rng=rng)
        self.opt_ = Adam(lr=self.lr)
        self.rng_ = rng
        self.loss_history_ = []
        self.n_features_in_ = n_features

    def fit(self, X, X_next, X_marginal=None):
        """Train on consecutive-state pairs ``(X[i], X_next[i])``.

        ``X_marginal`` holds the states the repulsive pairs are drawn from;
        it defaults to the union of ``X`` and ``X_next``.
        """
        X = check_array(X, dtype=np.float64)
        X_next = check_array(X_next, dtype=np.float64)
        if X.shape != X_next.shape:
            raise ValueError("X and X_next must have the same shape")
        if X.shape[0] < 1:
            raise ValueError("need at least one transition")
        if X_marginal is None:
            X_marginal = np.vstack([X, X_next])
        X_marginal = check_array(X_marginal, dtype=np.float64)
        self._init(X.shape[1])
        return self.partial_fit(X, X_next, X_marginal, steps=self.steps)

    def partial_fit(self, X, X_next, X_marginal=None, steps=1):
        if not hasattr(self, "net_"):
            self._init(np.asarray(X).shape[1])
        if X_marginal is None:
            X_marginal = np.vstack([X, X_next])
        n, m = len(X), len(X_marginal)
        bs = self.batch_size
        for _ in range(steps):
            i = self.rng_.integers(n, size=bs)
            u = self.rng_.integers(m, size=bs)
            v = self.rng_.integers(m, size=bs)
            self.train_step(X[i], X_next[i], X_marginal[u], X_marginal[v])
        return self

    def train_step(self, xs, xs_next, xu, xv) -> float:
        net = self.net_
        batch = np.vstack([xs, xs_next, xu, xv])
        out, acts = net.forward(batch, return_cache=True)
        a, b, c = len(xs), 2 * len(xs), 2 * len(xs) + len(xu)
        loss, (gs, gn, gu, gv) = graph_drawing_loss(
            out[:a], out[a:b], out[b:c], out[c:], self.lam, self.ordered)
        grads = net.backward(acts, np.vstack([gs, gn, gu, gv]))
        self.opt_.step(net, grads)
        self.loss_history_.append(loss)
        return loss

    def full_output(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        return self.net_.forward(check_array(X, dtype=np.float64))

    def transform(self, X) -> np.ndarray:
        return self.full_output(X)[:, 1:]

    def norms(self, X) -> np.ndarray:
        return np.linalg.norm(self.transform(X), axis=1)


class RandomRepresentation(TransformerMixin, BaseEstimator):
    """Stand-in embedding that returns fresh U(0, 1) values on every call."""

    def __init__(self, n_components=8, random_state=0):
        self.n_components = n_components
        self.random_state = random_state

    def fit(self, X=None, X_next=None, X_marginal=None):
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def transform(self, X):
        n = len(X)
        return self.rng_.uniform(0.0, 1.0, size=(n, self.n_components))


def buffer_pairs(transitions, features="local"):
    """Feature matrices ``(X, X_next)`` for the relocation legs in a buffer."""
    featurize = local_features if features == "local" else state_features
    transitions = list(transitions)
    X = featurize([t.state for t in transitions])
    X_next = featurize([t.next_state for t in transitions])
    return X, X_next


def train_embedding(buffer, config: EmbedTrainConfig | None = None, n_components=8,
                    hidden=(512, 128), features="local", random_state=0) -> LaplacianRepresentation:
    """Fit a representation on a snapshot of relocation transitions."""
    config = config or EmbedTrainConfig()
    transitions = list(buffer)
    if len(transitions) < config.batch_size:
        raise ValueError(f"need at least {config.batch_size} relocation transitions, "
                         f"got {len(transitions)}")
    X, X_next = buffer_pairs(transitions, features)
    est = LaplacianRepresentation(n_components, hidden, config.lam, config.batch_size,
                                  config.lr, config.steps, config.ordered, random_state)
    return est.fit(X, X_next)


def graph_training_pairs(A, node_features, n_samples, rng, rho="buffer"):
    """Sample ``(X, X_next, X_marginal)`` from a weighted graph.

    Edge pairs are drawn in proportion to weight.  ``rho="buffer"`` makes the
    marginal the endpoint distribution of those pairs (degree weighted);
    ``rho="uniform"`` uses every node once.
    """
    A = np.asarray(A, dtype=np.float64)
    node_features = np.asarray(node_features, dtype=np.float64)
    i, j = np.nonzero(np.triu(A, 1))
    w = A[i, j]
    pick = rng.choice(len(w), size=n_samples, p=w / w.sum())
    flip = rng.random(n_samples) < 0.5
    a = np.where(flip, j[pick], i[pick])
    b = np.where(flip, i[pick], j[pick])
    X, X_next = node_features[a], node_features[b]
    marg = node_features if rho == "uniform" else np.vstack([X, X_next])
    return X, X_next, marg


@dataclass
class ComparisonResult:
    correlation: float
    degenerate: bool
    n_pairs: int


def compare_exact(phi, lap, node_features=None, n_components=None) -> ComparisonResult:
    """Spearman correlation of pairwise distances: learned vs exact embedding.

    ``phi`` may be a fitted transformer (applied to ``node_features``) or an
    already computed ``(n_nodes, D)`` embedding array.
    """
    if not isinstance(lap, LaplacianView):
        lap = LaplacianView.from_graph(lap) if hasattr(lap, "adjacency") and callable(lap.adjacency) \
            else LaplacianView.from_adjacency(lap)
    F = np.asarray(phi.transform(node_features) if hasattr(phi, "transform") else phi, dtype=np.float64)
    D = n_components or F.shape[1]
    E = exact_embedding(lap, D).embedding
    iu = np.triu_indices(len(F), 1)
    d_phi = np.linalg.norm(F[:, None, :] - F[None, :, :], axis=-1)[iu]
    d_ex = np.linalg.norm(E[:, None, :] - E[None, :, :], axis=-1)[iu]
    if np.ptp(d_phi) < 1e-12 or np.ptp(d_ex) < 1e-12:
        return ComparisonResult(0.0, True, len(d_phi))
    rho = spearmanr(d_phi, d_ex).statistic
    return ComparisonResult(float(rho), False, len(d_phi))
