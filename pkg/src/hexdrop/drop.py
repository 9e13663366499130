"""Deep relocating options: pseudo-rewards over a frozen embedding.

Each option owns a 7-way Q-net trained by one-step Q-learning on relocation
legs from the relocation buffer, with the environment reward replaced by
one of three pseudo-rewards built from the embedding ``f`` and the trip
indicator ``I`` (1 when the leg ended in a dispatch):

    kind 1:  |f(s)| - |f(s')| + alpha * I
    kind 2:  |f(s')| - |f(s)| + alpha * I
    kind 3:  |f(s) - f(s')|  + alpha * I

``alpha = math.inf`` means the reward is ``I`` alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hexgrid import N_ACTIONS
from .laplace import EmbedTrainConfig, RandomRepresentation, train_embedding
from .nn import Adam, DenseNet, backward
from .sim import local_features, state_features

KINDS = (1, 2, 3)


def pseudo_reward(kind, fs, fs_next, indicator, alpha):
    """Vectorised over leading batch dimensions of ``fs``/``fs_next``."""
    if kind not in KINDS:
        raise ValueError(f"pseudo-reward kind must be 1, 2 or 3, got {kind}")
    indicator = np.asarray(indicator, dtype=np.float64)
    if math.isinf(alpha):
        return indicator + 0.0
    if alpha < 0:
        raise ValueError("alpha must be >= 0 or math.inf")
    fs = np.asarray(fs, dtype=np.float64)
    fs_next = np.asarray(fs_next, dtype=np.float64)
    if kind == 1:
        geo = np.linalg.norm(fs, axis=-1) - np.linalg.norm(fs_next, axis=-1)
    elif kind == 2:
        geo = np.linalg.norm(fs_next, axis=-1) - np.linalg.norm(fs, axis=-1)
    else:
        geo = np.linalg.norm(fs - fs_next, axis=-1)
    return geo + alpha * indicator


class OptionExpired(RuntimeError):
    pass


@dataclass(eq=False)
class DropOption:
    """A temporally extended relocation option lasting ``horizon`` legs."""
    id: int
    kind: int
    embedding: object
    qnet: DenseNet
    horizon: int = 5
    created_episode: int = 0
    alpha: float = 1.0
    gamma: float = 0.9
    lr: float = 1e-3
    slot: int = -1
    target: DenseNet = field(default=None, repr=False)
    opt: Adam = field(default=None, repr=False)
    updates: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.kind not in KINDS:
            raise ValueError(f"bad option kind {self.kind}")
        if self.target is None:
            self.target = self.qnet.copy()
        if self.opt is None:
            self.opt = Adam(lr=self.lr)

    def q_values(self, X) -> np.ndarray:
        return self.qnet.forward(X)

    def act(self, obs) -> int:
        q = self.qnet.forward(state_features([obs])[0])
        return int(np.argmax(q))  # first max = lowest action code

    def rewards(self, fs, fs_next, indicator) -> np.ndarray:
        return pseudo_reward(self.kind, fs, fs_next, indicator, self.alpha)

    def update(self, X, actions, rewards, X_next, done) -> float:
        """One Q-learning step on a relabelled minibatch."""
        q_next = self.target.forward(X_next).max(axis=1)
        y = rewards + self.gamma * q_next * (1.0 - done)
        n = len(actions)
        target = np.zeros((n, N_ACTIONS))
        mask = np.zeros((n, N_ACTIONS))
        target[np.arange(n), actions] = y
        mask[np.arange(n), actions] = 1.0
        loss, grads = backward(self.qnet, X, target, mask)
        self.opt.step(self.qnet, grads)
        self.updates += 1
        return loss

    def sync_target(self):
        self.target.load_params_from(self.qnet)

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "horizon": self.horizon,
                "created_episode": self.created_episode, "alpha": self.alpha,
                "slot": self.slot, "qnet": self.qnet.to_dict()}


def execute_step(option, obs, steps_executed: int) -> int:
    if steps_executed >= option.horizon:
        raise OptionExpired(f"option {getattr(option, 'id', option)} ran its {option.horizon} steps")
    return option.act(obs)


@dataclass
class LegBatch:
    """Feature arrays for a batch of relocation legs."""
    X: np.ndarray
    X_next: np.ndarray
    L: np.ndarray
    L_next: np.ndarray
    actions: np.ndarray
    matched: np.ndarray
    done: np.ndarray

    @classmethod
    def from_legs(cls, legs) -> "LegBatch":
        legs = list(legs)
        s = [t.state for t in legs]
        sn = [t.next_state for t in legs]
        return cls(state_features(s), state_features(sn), local_features(s), local_features(sn),
                   np.array([t.action for t in legs], dtype=np.int64),
                   np.array([t.matched for t in legs], dtype=np.float64),
                   np.array([t.done for t in legs], dtype=np.float64))

    def __len__(self):
        return len(self.actions)

    def take(self, idx) -> "LegBatch":
        return LegBatch(self.X[idx], self.X_next[idx], self.L[idx], self.L_next[idx],
                        self.actions[idx], self.matched[idx], self.done[idx])


def embed_pair(embedding, batch: LegBatch):
    n = len(batch)
    F = embedding.transform(np.vstack([batch.L, batch.L_next]))
    return F[:n], F[n:]


def train_options_on_batch(options, batch: LegBatch) -> list[float]:
    """One update for every option; options sharing an embedding share its pass."""
    cache = {}
    losses = []
    for o in options:
        key = id(o.embedding)
        if key not in cache:
            cache[key] = embed_pair(o.embedding, batch)
        fs, fn = cache[key]
        r = o.rewards(fs, fn, batch.matched)
        losses.append(o.update(batch.X, batch.actions, r, batch.X_next, batch.done))
    return losses


@dataclass
class OptionGenConfig:
    n_options: int = 3
    horizon: int = 5
    alpha: float = 1.0
    warmup_steps: int = 2000
    batch_size: int = 128
    gamma: float = 0.9
    lr: float = 1e-3
    hidden: tuple = (128,)
    target_update: int = 100
    n_components: int = 8
    embed_hidden: tuple = (512, 128)
    embed: EmbedTrainConfig = field(default_factory=EmbedTrainConfig)
    random_embedding: bool = False


def generate_options(buffer, config: OptionGenConfig, episode: int = 0, rng=None,
                     first_id: int = 0, embedding=None) -> list[DropOption]:
    """Train an embedding on ``buffer`` then one option per pseudo-reward kind.

    ``buffer`` is a sequence of relocation-leg transitions.  Pass
    ``embedding`` to reuse an already fitted representation.
    """
    if config.n_options == 0:
        return []
    legs = list(buffer)
    if not legs:
        raise ValueError("relocation buffer is empty")
    rng = np.random.default_rng(rng)
    seed = int(rng.integers(2**31))
    if embedding is None:
        if config.random_embedding:
            embedding = RandomRepresentation(config.n_components, random_state=seed).fit()
        else:
            embedding = train_embedding(legs, config.embed, config.n_components,
                                        config.embed_hidden, features="local", random_state=seed)
    data = LegBatch.from_legs(legs)
    n_features = data.X.shape[1]
    fixed = not config.random_embedding
    if fixed:
        fs, fn = embed_pair(embedding, data)
    options = []
    for i in range(config.n_options):
        kind = KINDS[i % len(KINDS)]
        net = DenseNet([n_features, *config.hidden, N_ACTIONS], rng=rng.integers(2**31))
        opt = DropOption(first_id + i, kind, embedding, net, config.horizon, episode,
                         config.alpha, config.gamma, config.lr)
        if fixed:
            rewards = opt.rewards(fs, fn, data.matched)
        for step in range(config.warmup_steps):
            idx = rng.integers(len(data), size=min(config.batch_size, len(data)))
            b = data.take(idx)
            r = rewards[idx] if fixed else opt.rewards(*embed_pair(embedding, b), b.matched)
            opt.update(b.X, b.actions, r, b.X_next, b.done)
            if (step + 1) % config.target_update == 0:
                opt.sync_target()
        opt.sync_target()
        options.append(opt)
    return options


def tabular_q_iteration(next_state, reward, gamma, tol=1e-10, max_iter=100000):
    """Value iteration on a deterministic MDP given as ``[S, A]`` tables."""
    next_state = np.asarray(next_state)
    reward = np.asarray(reward, dtype=np.float64)
    Q = np.zeros(reward.shape)
    for _ in range(max_iter):
        Qn = reward + gamma * Q.max(axis=1)[next_state]
        if np.max(np.abs(Qn - Q)) < tol:
            return Qn
        Q = Qn
    return Q
