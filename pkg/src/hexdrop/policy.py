"""High-level SMDP relocation policy, option augmentation and baselines."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .drop import DropOption, LegBatch, OptionGenConfig, generate_options, train_options_on_batch
from .hexgrid import N_ACTIONS, STAY, HexGrid
from .laplace import EmbedTrainConfig, LaplacianRepresentation, RandomRepresentation, buffer_pairs
from .nn import Adam, DenseNet, backward
from .sim import IDLE, PRIMITIVES, Scenario, discounted_option_reward, n_state_features, state_features
from .terg import RelocationGraph

LEARNED_KINDS = ("dqn", "drdqn", "drdqn-0", "drdqn-inf", "odrdqn", "rdrdqn")
RULE_KINDS = ("random", "greedy")
MODEL_KINDS = LEARNED_KINDS + RULE_KINDS

# alpha used by each learned variant; inf means "trip indicator only"
MODEL_ALPHA = {"drdqn": 1.0, "drdqn-0": 0.0, "drdqn-inf": math.inf,
               "odrdqn": 1.0, "rdrdqn": 1.0}


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._pos = 0

    def add(self, item):
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._pos] = item
        self._pos = (self._pos + 1) % self.capacity

    def sample(self, n: int, rng) -> list:
        idx = rng.integers(len(self._items), size=n)
        return [self._items[i] for i in idx]

    def snapshot(self) -> list:
        """Items oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._pos:] + self._items[:self._pos]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self.snapshot())


class HighLevelQNet:
    """Q-net over ``n_base + max_slots`` outputs; only the first ``n_active`` are live.

    Growing the option set flips mask bits and never touches the weights.
    ``featurize`` maps a list of states to the input matrix.
    """

    def __init__(self, n_features: int, max_slots: int = 0, hidden=(128,), lr=1e-3,
                 gamma=0.99, rng=None, n_base: int = N_ACTIONS, featurize=state_features):
        self.net = DenseNet([n_features, *hidden, n_base + max_slots], rng=rng)
        self.target = self.net.copy()
        self.opt = Adam(lr=lr)
        self.gamma = gamma
        self.n_active = n_base
        self.featurize = featurize

    @property
    def n_outputs(self) -> int:
        return self.net.n_out

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_outputs, dtype=bool)
        m[:self.n_active] = True
        return m

    def activate(self, k: int) -> list[int]:
        if self.n_active + k > self.n_outputs:
            raise ValueError(f"no room for {k} more options ({self.n_outputs - self.n_active} free)")
        slots = list(range(self.n_active, self.n_active + k))
        self.n_active += k
        return slots

    def q(self, X, target=False) -> np.ndarray:
        out = (self.target if target else self.net).forward(X)
        return np.where(self.mask, out, -np.inf)

    def q_states(self, states, target=False) -> np.ndarray:
        return self.q(self.featurize(states), target)

    def update(self, transitions) -> float:
        y = smdp_targets(transitions, self, self.gamma)
        X = self.featurize([t.state for t in transitions])
        n = len(transitions)
        slots = np.array([t.option.slot for t in transitions])
        target = np.zeros((n, self.n_outputs))
        mask = np.zeros((n, self.n_outputs))
        target[np.arange(n), slots] = y
        mask[np.arange(n), slots] = 1.0
        loss, grads = backward(self.net, X, target, mask)
        self.opt.step(self.net, grads)
        return loss

    def sync_target(self):
        self.target.load_params_from(self.net)


def smdp_target(transition, qnet: HighLevelQNet, gamma: float = 0.99) -> float:
    return float(smdp_targets([transition], qnet, gamma)[0])


def smdp_targets(transitions, qnet: HighLevelQNet, gamma: float = 0.99) -> np.ndarray:
    """``r(s,o) + gamma**dt * max_o' Q_target(s', o')``, no bootstrap when done."""
    r = np.array([discounted_option_reward(t.total_reward, t.dt, gamma) for t in transitions])
    dt = np.array([t.dt for t in transitions], dtype=np.float64)
    live = np.array([not t.done and t.next_state is not None for t in transitions])
    y = r.copy()
    if live.any():
        nxt = [t.next_state for t, ok in zip(transitions, live) if ok]
        qmax = qnet.q_states(nxt, target=True).max(axis=1)
        y[live] += gamma ** dt[live] * qmax
    return y


def select_option(qnet: HighLevelQNet, obs, options, eps: float, rng):
    """Epsilon-greedy over the active slots; ties go to the lowest slot."""
    q = qnet.q_states([obs])[0]
    idx = select_slots(q[None, :], qnet.n_active, eps, rng)[0]
    return options[idx]


def select_slots(Q, n_active: int, eps: float, rng) -> np.ndarray:
    n = Q.shape[0]
    greedy = np.argmax(Q[:, :n_active], axis=1)
    explore = rng.random(n) < eps
    random = rng.integers(n_active, size=n)
    return np.where(explore, random, greedy)


def epsilon_at(step: int, total: int, start=1.0, end=0.05, fraction=0.5) -> float:
    span = max(1, int(total * fraction))
    if step >= span:
        return end
    return start + (end - start) * step / span


# -- rule baselines ----------------------------------------------------------

class RandomRelocator(BaseEstimator):
    """Uniform choice among the seven primitive moves."""

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, scenario=None):
        self.fitted_ = True
        return self

    def assign(self, world, agents, rng):
        acts = rng.integers(N_ACTIONS, size=len(agents))
        return {a: PRIMITIVES[int(c)] for a, c in zip(agents, acts)}


class GreedyRelocator(RandomRelocator):
    """Stay put while open requests outnumber idle vehicles, else move at random.

    Evaluated with an unlimited pickup radius (``sim_overrides``).
    """

    sim_overrides = {"max_pickup": None}

    def assign(self, world, agents, rng):
        n_idle = sum(v.status == IDLE for v in world.vehicles)
        if len(world.open) >= n_idle:
            return {a: PRIMITIVES[STAY] for a in agents}
        return super().assign(world, agents, rng)


def baseline(kind: str, world, agents=None, rng=None, policy=None):
    """Per-agent option assignments for a model kind.

    Rule kinds need no policy; learned kinds delegate to ``policy.assign``.
    """
    agents = world.decision_agents() if agents is None else agents
    rng = np.random.default_rng(rng)
    if kind == "random":
        return RandomRelocator().assign(world, agents, rng)
    if kind == "greedy":
        return GreedyRelocator().assign(world, agents, rng)
    if kind in LEARNED_KINDS:
        if policy is None:
            raise ValueError(f"model kind {kind!r} needs a trained policy")
        return policy.assign(world, agents, rng)
    raise ValueError(f"unknown model kind {kind!r}")


# -- the learner ----------------------------------------------------------------

@dataclass
class TrainLog:
    rows: list

    def to_csv(self, path, window: int = 720):
        vals = []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "tick", "maxq", "maxq_ma", "loss"])
            for r in self.rows:
                if not math.isnan(r["maxq"]):
                    vals.append(r["maxq"])
                ma = float(np.mean(vals[-window:])) if vals else float("nan")
                w.writerow([r["episode"], r["tick"], r["maxq"], ma, r["loss"]])

    def maxq(self) -> np.ndarray:
        return np.array([r["maxq"] for r in self.rows if not math.isnan(r["maxq"])])


class DropRelocator(BaseEstimator):
    """Hierarchical relocation policy trained by SMDP deep Q-learning.

    ``model`` selects the variant: ``"dqn"`` (primitives only),
    ``"drdqn"`` (options added every ``option_period`` episodes, alpha 1),
    ``"drdqn-0"``/``"drdqn-inf"`` (alpha 0 / trip signal only),
    ``"odrdqn"`` (one option set whose embedding keeps training online) and
    ``"rdrdqn"`` (uniform random values in place of the embedding).

    ``fit(scenario)`` runs the training loop; ``predict(X)`` returns the
    greedy slot for each row of state features.  ``assign`` keeps a small
    ``eval_epsilon`` of exploration by default, so idle vehicles sharing a
    cell do not all herd the same way.
    """

    def __init__(self, model="drdqn", episodes=10, option_period=2, n_options=3, horizon=5,
                 alpha=None, warmup_steps=2000, hidden=(128,), option_hidden=(128,), lr=1e-3,
                 gamma=0.99, option_gamma=0.9, batch_size=256, option_batch_size=128,
                 memory_size=100_000, relocation_memory_size=30_000, target_update=100,
                 eps_start=1.0, eps_end=0.05, eps_decay_fraction=0.5, n_components=8,
                 embed_hidden=(512, 128), embed_steps=2000, embed_batch_size=32, embed_lam=1.0,
                 train_latest_only=False, eval_epsilon=0.05, random_state=0):
        self.model = model
        self.episodes = episodes
        self.option_period = option_period
        self.n_options = n_options
        self.horizon = horizon
        self.alpha = alpha
        self.warmup_steps = warmup_steps
        self.hidden = hidden
        self.option_hidden = option_hidden
        self.lr = lr
        self.gamma = gamma
        self.option_gamma = option_gamma
        self.batch_size = batch_size
        self.option_batch_size = option_batch_size
        self.memory_size = memory_size
        self.relocation_memory_size = relocation_memory_size
        self.target_update = target_update
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay_fraction = eps_decay_fraction
        self.n_components = n_components
        self.embed_hidden = embed_hidden
        self.embed_steps = embed_steps
        self.embed_batch_size = embed_batch_size
        self.embed_lam = embed_lam
        self.train_latest_only = train_latest_only
        self.eval_epsilon = eval_epsilon
        self.random_state = random_state

    # configuration -------------------------------------------------------
    def _check_params(self):
        if self.model not in LEARNED_KINDS:
            raise ValueError(f"unknown learned model {self.model!r}; expected one of {LEARNED_KINDS}")
        if self.option_period < 1:
            raise ValueError("option_period must be >= 1")
        if not all(0.0 <= e <= 1.0 for e in (self.eps_start, self.eps_end, self.eval_epsilon)):
            raise ValueError("epsilon must lie in [0, 1]")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")

    @property
    def uses_options(self) -> bool:
        return self.model != "dqn" and self.n_options > 0

    def _alpha(self) -> float:
        return MODEL_ALPHA.get(self.model, 1.0) if self.alpha is None else self.alpha

    def max_option_slots(self) -> int:
        if not self.uses_options:
            return 0
        if self.model == "odrdqn":
            return self.n_options
        return self.n_options * (self.episodes // self.option_period)

    def _gen_config(self) -> OptionGenConfig:
        return OptionGenConfig(
            n_options=self.n_options, horizon=self.horizon, alpha=self._alpha(),
            warmup_steps=self.warmup_steps, batch_size=self.option_batch_size,
            gamma=self.option_gamma, lr=self.lr, hidden=tuple(self.option_hidden),
            target_update=self.target_update, n_components=self.n_components,
            embed_hidden=tuple(self.embed_hidden),
            embed=EmbedTrainConfig(self.embed_lam, self.embed_batch_size, self.lr, self.embed_steps),
            random_embedding=self.model == "rdrdqn")

    def _init(self, scenario: Scenario):
        self._check_params()
        self.scenario_ = scenario
        self.grid_ = HexGrid(scenario.config.grid)
        self.rng_ = np.random.default_rng(self.random_state)
        nf = n_state_features(self.grid_.n_cells)
        self.n_features_in_ = nf
        self.qnet_ = HighLevelQNet(nf, self.max_option_slots(), tuple(self.hidden), self.lr,
                                   self.gamma, rng=self.rng_.integers(2**31))
        self.options_ = list(PRIMITIVES)
        self.drops_: list[DropOption] = []
        self.memory_ = ReplayBuffer(self.memory_size)
        self.relocations_ = ReplayBuffer(self.relocation_memory_size)
        self.terg_ = RelocationGraph(scenario.config.hour_ticks)
        self.log_ = TrainLog([])
        self.episodes_done_ = 0
        self.ticks_done_ = 0
        self.online_embedding_ = None

    # training ---------------------------------------------------------------
    def fit(self, scenario: Scenario, episodes=None):
        self._init(scenario)
        return self.partial_fit(scenario, episodes)

    def partial_fit(self, scenario: Scenario, episodes=None):
        if not hasattr(self, "qnet_"):
            self._init(scenario)
        n_ep = self.episodes if episodes is None else episodes
        T = scenario.config.episode_ticks
        total_ticks = max(1, self.episodes * T)
        world = scenario.make_world(0, grid=self.grid_)
        for _ in range(n_ep):
            e = self.episodes_done_
            world.reset(int(self.rng_.integers(2**31)))
            while not world.done:
                eps = epsilon_at(self.ticks_done_, total_ticks, self.eps_start, self.eps_end,
                                 self.eps_decay_fraction)
                self._train_tick(world, e, eps)
            self.episodes_done_ += 1
            if self.uses_options and self.episodes_done_ % self.option_period == 0:
                self._augment(e)
        return self

    def _train_tick(self, world, episode, eps):
        agents = world.decision_agents()
        assignments = {}
        maxq = float("nan")
        if agents:
            obs = [world.observe(a) for a in agents]
            Q = self.qnet_.q(state_features(obs))
            maxq = float(Q.max(axis=1).mean())
            slots = select_slots(Q, self.qnet_.n_active, eps, self.rng_)
            assignments = {a: self.options_[s] for a, s in zip(agents, slots)}
        res = world.tick(assignments)
        for tr in res.transitions:
            self.memory_.add(tr)
        for leg in res.legs:
            self.relocations_.add(leg)
            self.terg_.record_leg(self.grid_, leg)

        loss = float("nan")
        if len(self.memory_) >= self.batch_size:
            loss = self.qnet_.update(self.memory_.sample(self.batch_size, self.rng_))
        trainable = self._trainable_options()
        if trainable and len(self.relocations_) >= self.option_batch_size:
            legs = self.relocations_.sample(self.option_batch_size, self.rng_)
            if self.online_embedding_ is not None:
                X, Xn = buffer_pairs(legs[:self.embed_batch_size])
                self.online_embedding_.partial_fit(X, Xn, steps=1)
            train_options_on_batch(trainable, LegBatch.from_legs(legs))
        self.ticks_done_ += 1
        if self.ticks_done_ % self.target_update == 0:
            self.qnet_.sync_target()
            for o in self.drops_:
                o.sync_target()
        self.log_.rows.append({"episode": episode, "tick": world.t - 1, "maxq": maxq, "loss": loss})

    def _trainable_options(self):
        if not self.drops_ or not self.train_latest_only:
            return self.drops_
        latest = max(o.created_episode for o in self.drops_)
        return [o for o in self.drops_ if o.created_episode == latest]

    def _augment(self, episode):
        if self.model == "odrdqn" and self.drops_:
            return
        legs = self.relocations_.snapshot()
        cfg = self._gen_config()
        if len(legs) < max(cfg.embed.batch_size, 1):
            return
        new = generate_options(legs, cfg, episode=episode, rng=self.rng_.integers(2**31),
                               first_id=len(self.drops_))
        if self.model == "odrdqn" and new:
            self.online_embedding_ = new[0].embedding
        for o, slot in zip(new, self.qnet_.activate(len(new))):
            o.slot = slot
            self.options_.append(o)
            self.drops_.append(o)

    # inference ----------------------------------------------------------------
    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "qnet_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.argmax(self.qnet_.q(X)[:, :self.qnet_.n_active], axis=1)

    def assign(self, world, agents, rng, eps: float | None = None):
        eps = self.eval_epsilon if eps is None else eps
        if not agents:
            return {}
        obs = [world.observe(a) for a in agents]
        Q = self.qnet_.q(state_features(obs))
        slots = select_slots(Q, self.qnet_.n_active, eps, rng)
        return {a: self.options_[s] for a, s in zip(agents, slots)}

    # persistence ---------------------------------------------------------------
    def save(self, directory):
        check_is_fitted(self, "qnet_")
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.qnet_.net.save(d / "high_level.json")
        embeddings = {}
        registry = []
        for o in self.drops_:
            key = id(o.embedding)
            if key not in embeddings:
                embeddings[key] = len(embeddings)
                if isinstance(o.embedding, LaplacianRepresentation):
                    o.embedding.net_.save(d / f"embedding_{embeddings[key]}.json")
            entry = o.to_dict()
            entry["embedding"] = embeddings[key]
            entry["random_embedding"] = isinstance(o.embedding, RandomRepresentation)
            registry.append(entry)
        meta = {"params": _jsonable(self.get_params()), "n_active": self.qnet_.n_active,
                "n_features": self.n_features_in_, "episodes_done": self.episodes_done_,
                "options": registry}
        (d / "options.json").write_text(json.dumps(meta, indent=1))
        self.log_.to_csv(d / "train_log.csv")

    @classmethod
    def load(cls, directory) -> "DropRelocator":
        d = Path(directory)
        meta = json.loads((d / "options.json").read_text())
        params = meta["params"]
        for k in ("hidden", "option_hidden", "embed_hidden"):
            params[k] = tuple(params[k])
        if params.get("alpha") == "inf":
            params["alpha"] = math.inf
        self = cls(**params)
        self._check_params()
        self.n_features_in_ = meta["n_features"]
        net = DenseNet.load(d / "high_level.json")
        self.qnet_ = HighLevelQNet(net.n_in, net.n_out - N_ACTIONS, tuple(self.hidden),
                                   self.lr, self.gamma, rng=0)
        self.qnet_.net = net
        self.qnet_.target = net.copy()
        self.qnet_.n_active = meta["n_active"]
        self.options_ = list(PRIMITIVES)
        self.drops_ = []
        embeddings = {}
        for entry in meta["options"]:
            k = entry["embedding"]
            if k not in embeddings:
                if entry["random_embedding"]:
                    embeddings[k] = RandomRepresentation(self.n_components).fit()
                else:
                    emb = LaplacianRepresentation(self.n_components, self.embed_hidden)
                    emb.net_ = DenseNet.load(d / f"embedding_{k}.json")
                    embeddings[k] = emb
            alpha = entry["alpha"]
            o = DropOption(entry["id"], entry["kind"], embeddings[k],
                           DenseNet.from_dict(entry["qnet"]), entry["horizon"],
                           entry["created_episode"], float(alpha), self.option_gamma,
                           self.lr, entry["slot"])
            self.options_.append(o)
            self.drops_.append(o)
        self.episodes_done_ = meta["episodes_done"]
        return self


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        if isinstance(v, float) and math.isinf(v):
            v = "inf"
        out[k] = v
    return out
