"""Tick-driven ride-hailing fleet simulator on a hexagonal grid.

Each call to :meth:`World.tick` processes one tick in a fixed phase order:

1. advance moving vehicles, pick up and drop off passengers, credit fares
2. inject new requests
3. expire open requests whose wait exceeds ``max_wait``
4. start relocation legs for idle vehicles that hold an option
5. match open requests to available (idle or cruising) vehicles
6. emit the transitions whose decision cycle closed this tick

An agent's decision cycle starts when it is handed an option and ends when
the option runs out (relocation), when it is matched mid-option, or when
the passenger it is serving is dropped off.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .demand import PoissonDemand, Request
from .hexgrid import N_ACTIONS, STAY, GridSpec, HexGrid

OFFLINE = "offline"
IDLE = "idle"
ENROUTE = "enroute_pickup"
OCCUPIED = "occupied"
CRUISING = "cruising"
STATUSES = (OFFLINE, IDLE, ENROUTE, OCCUPIED, CRUISING)

N_CHANNELS = 3  # available vehicles, open requests, busy vehicles


class SimError(RuntimeError):
    pass


@dataclass
class SimConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    n_vehicles: int = 20
    episode_ticks: int = 1440
    hour_ticks: int = 60
    max_wait: int = 5
    max_pickup: int | None = 8
    beta: tuple = (1.0, 0.1, 0.0002)
    fare_base: float = 2.5
    fare_per_km: float = 1.5
    fare_per_min: float = 0.35
    wait_penalty: float = 0.1
    gamma: float = 0.99
    entry_window: int = 30
    match_priority: str = "longest_wait"

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = GridSpec(**self.grid)
        self.beta = tuple(float(b) for b in self.beta)
        if self.match_priority not in ("longest_wait", "shortest_wait"):
            raise ValueError(f"unknown match_priority {self.match_priority!r}")
        if self.n_vehicles < 0 or self.episode_ticks < 1:
            raise ValueError("n_vehicles must be >= 0 and episode_ticks >= 1")


class PrimitiveOption:
    """One of the seven one-step moves, wrapped as an option of horizon 1."""

    horizon = 1

    def __init__(self, code: int):
        if not 0 <= code < N_ACTIONS:
            raise ValueError(f"primitive action must be in 0..6, got {code}")
        self.code = code
        self.slot = code

    def act(self, obs=None) -> int:
        return self.code

    def __repr__(self):
        return f"PrimitiveOption({self.code})"

    def __eq__(self, other):
        return isinstance(other, PrimitiveOption) and other.code == self.code

    def __hash__(self):
        return hash(("primitive", self.code))


PRIMITIVES = tuple(PrimitiveOption(a) for a in range(N_ACTIONS))


@dataclass(frozen=True)
class Observation:
    """What an agent sees: shared global channels plus its own time and cell.

    ``global_channels`` is ``(3, n_cells)`` and is shared between all
    observations taken at the same moment; treat it as read-only.
    """
    global_channels: np.ndarray
    tick: int
    cell: int
    episode_ticks: int

    @property
    def n_cells(self) -> int:
        return self.global_channels.shape[1]

    @property
    def local(self) -> tuple[float, np.ndarray]:
        onehot = np.zeros(self.n_cells)
        onehot[self.cell] = 1.0
        return self.tick / self.episode_ticks, onehot

    def features(self) -> np.ndarray:
        return state_features([self])[0]

    def local_features(self) -> np.ndarray:
        return local_features([self])[0]


def n_state_features(n_cells: int) -> int:
    return N_CHANNELS * n_cells + 1 + n_cells


def n_local_features(n_cells: int) -> int:
    return 1 + n_cells


def state_features(obs_list) -> np.ndarray:
    """Stack ``[global channels, t/T, one-hot cell]`` for a batch of observations."""
    n = len(obs_list)
    H = obs_list[0].n_cells
    X = np.zeros((n, N_CHANNELS * H + 1 + H))
    for i, o in enumerate(obs_list):
        X[i, :N_CHANNELS * H] = o.global_channels.ravel()
        X[i, N_CHANNELS * H] = o.tick / o.episode_ticks
        X[i, N_CHANNELS * H + 1 + o.cell] = 1.0
    return X


def local_features(obs_list) -> np.ndarray:
    n = len(obs_list)
    H = obs_list[0].n_cells
    X = np.zeros((n, 1 + H))
    X[:, 0] = [o.tick / o.episode_ticks for o in obs_list]
    X[np.arange(n), [1 + o.cell for o in obs_list]] = 1.0
    return X


@dataclass
class Transition:
    agent: int
    state: Observation
    option: Any
    rewards: list
    dt: int
    next_state: Observation | None
    is_relocation: bool
    done: bool = False
    # relocation legs only: primitive action and trip indicator
    action: int = -1
    matched: int = 0
    start_tick: int = 0
    end_tick: int = 0
    start_cell: int = -1
    end_cell: int = -1

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


@dataclass
class TickResult:
    events: list
    transitions: list
    legs: list

    def __iter__(self):
        return iter((self.events, self.transitions))


@dataclass
class _Cycle:
    kind: str  # "relocation" | "serving"
    option: Any
    state: Observation
    start_tick: int
    start_cell: int
    rewards: list = field(default_factory=list)
    fare: float = 0.0


@dataclass
class _Leg:
    kind: str  # "relocation" | "pickup" | "trip"
    path: list
    ticks: int
    elapsed: int = 0
    action: int = -1
    state: Observation | None = None
    start_tick: int = 0

    def position(self, elapsed=None) -> int:
        e = self.elapsed if elapsed is None else elapsed
        n = len(self.path) - 1
        return self.path[(n * e) // self.ticks]


@dataclass
class Vehicle:
    id: int
    status: str = OFFLINE
    cell: int = 0
    entry_tick: int = 0
    ticks_remaining: int = 0
    option: Any = None
    steps: int = 0
    last_option: Any = PRIMITIVES[STAY]
    earnings: float = 0.0
    request: int = -1
    leg: _Leg | None = None
    cycle: _Cycle | None = None


def tick_reward(fare: float, dtau: int, dist_m: float, beta=(1.0, 0.1, 0.0002)) -> float:
    b1, b2, b3 = beta
    return b1 * fare - b2 * dtau - b3 * dist_m


def fare(wait: int, distance_m: float, trip_ticks: int, base=2.5, per_km=1.5,
         per_min=0.35, wait_penalty=0.1) -> float:
    return max(0.0, base + per_km * distance_m / 1000.0 + per_min * trip_ticks
               - wait_penalty * wait)


def discounted_option_reward(total: float, dt: int, gamma: float) -> float:
    """Spread ``total`` evenly over ``dt`` ticks and discount each share.

    Equals ``sum(gamma**k * total/dt for k in range(dt))``.
    """
    if dt < 1:
        raise ValueError("dt must be >= 1")
    if dt == 1:
        return float(total)
    if gamma == 1.0:
        return float(total)
    return float(total * (gamma ** dt - 1.0) / (dt * (gamma - 1.0)))


class World:
    """Complete simulator state for one episode.

    Parameters
    ----------
    config : SimConfig
    demand : object with ``requests_at(tick, rng)``
        E.g. :class:`~hexdrop.demand.PoissonDemand` or ``ReplayDemand``.
    seed : int
    record_log : bool
        Keep the JSON-lines event log in memory for hashing/export.
    """

    def __init__(self, config: SimConfig, demand, seed: int = 0, record_log: bool = False,
                 grid: HexGrid | None = None):
        self.config = config
        self.grid = grid if grid is not None else HexGrid(config.grid)
        self.demand = demand
        self.record_log = record_log
        self.reset(seed)

    # -- lifecycle -----------------------------------------------------
    def reset(self, seed: int | None = None):
        if seed is not None:
            self.seed = seed
        self.rng = np.random.default_rng(self.seed)
        cfg = self.config
        H = self.grid.n_cells
        self.t = 0
        self.done = False
        self.requests: dict[int, Request] = {}
        self.open: dict[int, Request] = {}
        self._next_request = 0
        self.log: list[dict] = []
        self._events: list[dict] = []
        T = cfg.episode_ticks
        self.stats = {
            "arrivals": np.zeros(T, dtype=np.int64),
            "served": np.zeros(T, dtype=np.int64),
            "rejected": np.zeros(T, dtype=np.int64),
            "completed": np.zeros(T, dtype=np.int64),
            "reward": np.zeros(T),
            "fare": np.zeros(T),
        }
        window = max(1, min(cfg.entry_window, T))
        self.vehicles = []
        for i in range(cfg.n_vehicles):
            v = Vehicle(i, cell=int(self.rng.integers(H)), entry_tick=int(self.rng.integers(window)))
            self.vehicles.append(v)
        self._enter(0)
        self._snapshot()
        return self

    def _enter(self, t):
        for v in self.vehicles:
            if v.status == OFFLINE and v.entry_tick == t:
                v.status = IDLE
                self._event(t, "enter", v.id, -1, v.cell, 0.0)

    def _event(self, tick, kind, agent, request, cell, value):
        ev = {"tick": int(tick), "kind": kind, "agent": int(agent), "request": int(request),
              "cell": int(cell), "value": round(float(value), 10)}
        if self.record_log:
            self.log.append(ev)
        self._events.append(ev)

    # -- observation ---------------------------------------------------
    def _snapshot(self):
        H = self.grid.n_cells
        g = np.zeros((N_CHANNELS, H))
        for v in self.vehicles:
            if v.status in (IDLE, CRUISING):
                g[0, v.cell] += 1
            elif v.status in (ENROUTE, OCCUPIED):
                g[2, v.cell] += 1
        for r in self.open.values():
            g[1, r.origin] += 1
        g.flags.writeable = False
        self._global = g

    def global_channels(self) -> np.ndarray:
        return self._global

    def observe(self, agent: int) -> Observation:
        v = self.vehicles[agent]
        return Observation(self._global, self.t, v.cell, self.config.episode_ticks)

    def decision_agents(self) -> list[int]:
        """Idle agents that need a new option from the high-level policy."""
        return [v.id for v in self.vehicles if v.status == IDLE and v.option is None]

    def status_counts(self) -> dict[str, int]:
        out = dict.fromkeys(STATUSES, 0)
        for v in self.vehicles:
            out[v.status] += 1
        return out

    # -- the tick --------------------------------------------------------
    def tick(self, option_assignments=None) -> TickResult:
        if self.done:
            raise SimError("episode is over")
        cfg = self.config
        t = self.t
        self._events = []
        closed: list[tuple[Vehicle, _Cycle, bool]] = []   # (vehicle, cycle, is_relocation)
        legs: list[tuple[Vehicle, _Leg, int]] = []        # (vehicle, leg, end cell)
        matched_now: set[int] = set()

        for agent, option in (option_assignments or {}).items():
            v = self.vehicles[agent]
            if v.status != IDLE or v.option is not None:
                raise SimError(f"agent {agent} is not awaiting a decision (status {v.status})")
            if isinstance(option, (int, np.integer)):
                option = PRIMITIVES[int(option)]
            v.option = option
            v.steps = 0
            v.cycle = _Cycle("relocation", option, self.observe(agent), t, v.cell)

        # 1. advance
        pitch = cfg.grid.pitch
        for v in self.vehicles:
            if v.leg is None:
                continue
            leg = v.leg
            before = leg.position()
            leg.elapsed += 1
            v.cell = leg.position()
            v.ticks_remaining = leg.ticks - leg.elapsed
            moved = self.grid.distance_matrix[before, v.cell]
            c = 0.0
            if leg.kind == "trip" and leg.elapsed == leg.ticks:
                req = self.requests[v.request]
                c = fare(req.wait, self.grid.distance_matrix[req.origin, req.destination] * pitch,
                         leg.ticks, cfg.fare_base, cfg.fare_per_km, cfg.fare_per_min,
                         cfg.wait_penalty)
                v.cycle.fare += c
                self.stats["fare"][t] += c
            r = tick_reward(c, 1, moved * pitch, cfg.beta)
            v.cycle.rewards.append(r)
            v.earnings += r
            self.stats["reward"][t] += r
            if leg.elapsed < leg.ticks:
                continue
            v.leg = None
            if leg.kind == "relocation":
                legs.append((v, leg, v.cell))
                v.steps += 1
                v.status = IDLE
                self._event(t, "arrive", v.id, -1, v.cell, leg.action)
                if v.steps >= v.option.horizon:
                    closed.append((v, v.cycle, True))
                    v.last_option = v.option
                    v.option = None
                    v.cycle = None
            elif leg.kind == "pickup":
                self._pickup(v, t)
            else:
                req = self.requests[v.request]
                req.status = "completed"
                self.stats["completed"][t] += 1
                self._event(t, "complete", v.id, req.id, v.cell, c)
                closed.append((v, v.cycle, False))
                v.cycle = None
                v.request = -1
                v.status = IDLE

        # 2. inject
        for req in self.demand.requests_at(t, self.rng):
            req.id = self._next_request
            req.request_tick = t
            self._next_request += 1
            self.requests[req.id] = req
            self.open[req.id] = req
            self.stats["arrivals"][t] += 1
            self._event(t, "request", -1, req.id, req.origin, req.destination)

        # 3. expire
        for rid in list(self.open):
            req = self.open[rid]
            req.wait = t - req.request_tick
            if req.wait > cfg.max_wait:
                req.status = "rejected"
                del self.open[rid]
                self.stats["rejected"][req.request_tick] += 1
                self._event(t, "reject", -1, rid, req.origin, req.wait)

        # 4. relocation legs
        self._snapshot()
        for v in self.vehicles:
            if v.status != IDLE or v.option is None:
                continue
            if v.steps >= v.option.horizon:
                raise SimError(f"option of agent {v.id} already expired")
            obs = self.observe(v.id)
            a = int(v.option.act(obs))
            dest = int(self.grid.neighbor_table[v.cell, a])
            ticks = max(1, int(self.grid.travel_time_matrix[v.cell, dest]))
            v.leg = _Leg("relocation", [v.cell, dest], ticks, action=a, state=obs, start_tick=t)
            v.status = CRUISING
            v.ticks_remaining = ticks
            self._event(t, "relocate", v.id, -1, v.cell, a)

        # 5. match
        for v, req in self.match():
            matched_now.add(v.id)
            if v.leg is not None and v.leg.kind == "relocation":
                if v.leg.elapsed > 0:
                    legs.append((v, v.leg, v.cell))
                v.leg = None
            if v.cycle is not None and v.cycle.kind == "relocation":
                if v.cycle.rewards:
                    closed.append((v, v.cycle, False))
                v.last_option = v.option
            v.option = None
            v.cycle = _Cycle("serving", v.last_option, self.observe(v.id), t, v.cell)
            v.request = req.id
            req.status = "assigned"
            req.vehicle = v.id
            del self.open[req.id]
            self.stats["served"][req.request_tick] += 1
            self._event(t, "assign", v.id, req.id, req.origin, req.wait)
            pickup = int(self.grid.travel_time_matrix[v.cell, req.origin])
            self._event(t, "dispatch", v.id, req.id, v.cell, pickup)
            if pickup == 0:
                self._pickup(v, t)
            else:
                v.status = ENROUTE
                v.leg = _Leg("pickup", self.grid.line_indices(v.cell, req.origin), pickup,
                             start_tick=t)
                v.ticks_remaining = pickup

        # 6. emit
        self.t = t + 1
        self.done = self.t >= cfg.episode_ticks
        if not self.done:
            self._enter(self.t)
        self._snapshot()
        transitions = []
        for v, cyc, is_reloc in closed:
            transitions.append(self._close(v, cyc, is_reloc, self.done))
        if self.done:
            for v in self.vehicles:
                if v.cycle is not None and v.cycle.rewards:
                    transitions.append(self._close(v, v.cycle, v.cycle.kind == "relocation", True))
        leg_records = []
        for v, leg, end in legs:
            nxt = Observation(self._global, self.t, end, cfg.episode_ticks)
            leg_records.append(Transition(
                agent=v.id, state=leg.state, option=PRIMITIVES[leg.action], rewards=[],
                dt=leg.elapsed, next_state=nxt, is_relocation=True, done=self.done,
                action=leg.action, matched=int(v.id in matched_now),
                start_tick=leg.start_tick, end_tick=self.t,
                start_cell=leg.path[0], end_cell=end))
        return TickResult(self._events, transitions, leg_records)

    def _pickup(self, v: Vehicle, t: int):
        req = self.requests[v.request]
        req.status = "picked_up"
        req.wait = t - req.request_tick
        self._event(t, "pickup", v.id, req.id, v.cell, req.wait)
        ticks = max(1, int(self.grid.travel_time_matrix[req.origin, req.destination]))
        v.leg = _Leg("trip", self.grid.line_indices(req.origin, req.destination), ticks,
                     start_tick=t)
        v.status = OCCUPIED
        v.ticks_remaining = ticks

    def _close(self, v, cyc: _Cycle, is_reloc: bool, done: bool) -> Transition:
        return Transition(
            agent=v.id, state=cyc.state, option=cyc.option, rewards=list(cyc.rewards),
            dt=len(cyc.rewards), next_state=self.observe(v.id), is_relocation=is_reloc,
            done=done, start_tick=cyc.start_tick, end_tick=self.t,
            start_cell=cyc.start_cell, end_cell=v.cell)

    def match(self) -> list[tuple[Vehicle, Request]]:
        """Greedy dispatch: longest-waiting request first, nearest vehicle.

        Ties go to the lower request id and the lower vehicle id.  With
        ``max_pickup=None`` the pickup radius is unlimited.
        """
        cfg = self.config
        if not self.open:
            return []
        sign = -1 if cfg.match_priority == "longest_wait" else 1
        order = sorted(self.open.values(), key=lambda r: (sign * r.wait, r.id))
        avail = [v for v in self.vehicles if v.status in (IDLE, CRUISING)]
        if not avail:
            return []
        cells = np.array([v.cell for v in avail])
        free = np.ones(len(avail), dtype=bool)
        tt = self.grid.travel_time_matrix
        dist = self.grid.distance_matrix
        pairs = []
        for req in order:
            if not free.any():
                break
            if req.wait > cfg.max_wait:
                raise SimError(f"request {req.id} matched after waiting {req.wait}")
            d = dist[cells, req.origin].astype(np.float64)
            ok = free.copy()
            if cfg.max_pickup is not None:
                ok &= tt[cells, req.origin] <= cfg.max_pickup
            if not ok.any():
                continue
            d[~ok] = np.inf
            j = int(np.argmin(d))  # first minimum = lowest vehicle id
            free[j] = False
            pairs.append((avail[j], req))
        return pairs

    # -- logging --------------------------------------------------------
    def log_lines(self) -> list[str]:
        return [json.dumps(ev, sort_keys=True) for ev in self.log]

    def log_hash(self) -> str:
        h = hashlib.sha256()
        for line in self.log_lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write_log(self, path):
        with open(path, "w") as fh:
            for line in self.log_lines():
                fh.write(line + "\n")


def make_world(config: SimConfig, profile, seed=0, **kw) -> World:
    return World(config, PoissonDemand(profile), seed=seed, **kw)


@dataclass
class Scenario:
    """A simulator config plus a demand source: everything needed to run episodes."""
    config: SimConfig
    profile: Any = None
    trips: Any = None
    mode: str = "poisson"

    def __post_init__(self):
        if self.mode not in ("poisson", "replay"):
            raise ValueError(f"demand mode must be 'poisson' or 'replay', got {self.mode!r}")
        if self.mode == "poisson" and self.profile is None:
            raise ValueError("poisson demand needs a profile")
        if self.mode == "replay" and self.trips is None:
            raise ValueError("replay demand needs trip records")

    def make_world(self, seed=0, record_log=False, grid=None, **overrides) -> World:
        from dataclasses import replace

        from .demand import ReplayDemand

        cfg = replace(self.config, **overrides) if overrides else self.config
        grid = grid if grid is not None else HexGrid(cfg.grid)
        demand = PoissonDemand(self.profile) if self.mode == "poisson" else ReplayDemand(self.trips, grid)
        return World(cfg, demand, seed=seed, record_log=record_log, grid=grid)
