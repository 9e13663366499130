"""Evaluation metrics, model comparison and diagnostics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hexgrid import N_ACTIONS, GridSpec, HexGrid
from .policy import GreedyRelocator, RandomRelocator
from .sim import OFFLINE, Scenario

# hour-of-day ranges; hours outside every named period only count toward Overall
PERIODS = {
    "peak": ((8, 10), (18, 20)),
    "offpeak": ((10, 14),),
    "night": ((3, 5),),
    "overall": ((0, 24),),
}
PERIOD_ORDER = ("peak", "offpeak", "night", "overall")


def period_hours(name: str) -> list[int]:
    return [h for lo, hi in PERIODS[name] for h in range(lo, hi)]


@dataclass
class EpisodeStats:
    """Per-hour accounting for one simulated day."""
    revenue: np.ndarray      # summed agent reward per hour
    arrivals: np.ndarray     # by request hour
    served: np.ndarray
    rejected: np.ndarray
    pending: int
    n_vehicles: int

    @classmethod
    def from_world(cls, world) -> "EpisodeStats":
        cfg = world.config
        n_hours = math.ceil(cfg.episode_ticks / cfg.hour_ticks)
        hour = np.arange(cfg.episode_ticks) // cfg.hour_ticks

        def by_hour(x):
            return np.bincount(hour, weights=x, minlength=n_hours)

        st = world.stats
        return cls(by_hour(st["reward"]), by_hour(st["arrivals"]), by_hour(st["served"]),
                   by_hour(st["rejected"]), len(world.open), cfg.n_vehicles)

    def check_identity(self):
        total = self.served.sum() + self.rejected.sum() + self.pending
        if total != self.arrivals.sum():
            raise AssertionError(f"served+rejected+pending={total} != arrivals={self.arrivals.sum()}")


@dataclass
class PeriodMetrics:
    revenue_mean: float
    revenue_std: float
    rejection_rate: float     # percent
    rejection_defined: bool


@dataclass
class Metrics:
    """Hourly revenue per vehicle and rejection rate per period, over runs."""
    periods: dict
    served_rate: float
    served_rate_std: float
    arrivals: int
    served: int
    rejected: int
    pending: int
    n_runs: int
    episodes: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"periods": {k: asdict(v) for k, v in self.periods.items()},
                "served_rate": self.served_rate, "served_rate_std": self.served_rate_std,
                "arrivals": self.arrivals, "served": self.served, "rejected": self.rejected,
                "pending": self.pending, "n_runs": self.n_runs}

    @classmethod
    def from_dict(cls, d) -> "Metrics":
        periods = {k: PeriodMetrics(**v) for k, v in d["periods"].items()}
        return cls(periods, d["served_rate"], d["served_rate_std"], d["arrivals"], d["served"],
                   d["rejected"], d["pending"], d["n_runs"])


def _period_mask(name, n_hours):
    mask = np.zeros(n_hours, dtype=bool)
    for h in period_hours(name):
        if h < n_hours:
            mask[h] = True
    return mask


def aggregate(episodes: list[EpisodeStats]) -> Metrics:
    """Combine per-episode stats into period metrics (mean and std over episodes)."""
    if not episodes:
        raise ValueError("no episodes to aggregate")
    n_hours = len(episodes[0].revenue)
    periods = {}
    for name in PERIOD_ORDER:
        mask = _period_mask(name, n_hours)
        if not mask.any():
            periods[name] = PeriodMetrics(0.0, 0.0, 0.0, False)
            continue
        per_ep = [e.revenue[mask].sum() / (mask.sum() * e.n_vehicles) for e in episodes]
        arr = sum(e.arrivals[mask].sum() for e in episodes)
        rej = sum(e.rejected[mask].sum() for e in episodes)
        defined = arr > 0
        periods[name] = PeriodMetrics(float(np.mean(per_ep)), float(np.std(per_ep)),
                                      float(100.0 * rej / arr) if defined else 0.0, bool(defined))
    rates = [e.served.sum() / e.arrivals.sum() for e in episodes if e.arrivals.sum() > 0]
    return Metrics(
        periods,
        float(np.mean(rates)) if rates else 0.0,
        float(np.std(rates)) if rates else 0.0,
        int(sum(e.arrivals.sum() for e in episodes)),
        int(sum(e.served.sum() for e in episodes)),
        int(sum(e.rejected.sum() for e in episodes)),
        int(sum(e.pending for e in episodes)),
        len(episodes), episodes)


def run_episode(policy, scenario: Scenario, seed: int, record_log=False, observer=None, grid=None):
    """Play one day with a frozen policy (epsilon 0); returns the finished world.

    ``observer(world)`` is called before every tick.
    """
    overrides = getattr(policy, "sim_overrides", {}) or {}
    world = scenario.make_world(seed, record_log=record_log, grid=grid, **overrides)
    rng = np.random.default_rng([seed, 7])
    while not world.done:
        if observer is not None:
            observer(world)
        agents = world.decision_agents()
        world.tick(policy.assign(world, agents, rng) if agents else {})
    return world


def evaluate(policy, scenario: Scenario, days: int = 1, seeds=(0,)) -> Metrics:
    """Metrics over ``days`` simulated days for each seed."""
    grid = HexGrid(scenario.config.grid)
    episodes = []
    for s in seeds:
        for d in range(days):
            w = run_episode(policy, scenario, seed=int(s) * 10_007 + d, grid=grid)
            e = EpisodeStats.from_world(w)
            e.check_identity()
            episodes.append(e)
    return aggregate(episodes)


# -- dithering ---------------------------------------------------------------

def uniform_policy(cells, step, rng):
    return rng.integers(N_ACTIONS, size=len(cells))


def constant_policy(action: int):
    def pick(cells, step, rng):
        return np.full(len(cells), action)
    return pick


def _as_vector_policy(policy):
    if policy in (None, "random"):
        return uniform_policy
    if isinstance(policy, RandomRelocator):
        return uniform_policy
    if isinstance(policy, (int, np.integer)):
        return constant_policy(int(policy))
    return policy


def dithering_curve(policy, origin=(0, 0), max_ring: int = 5, trials: int = 10_000,
                    rng=None) -> list[float]:
    """Estimate P(reach ring n from ``origin`` within n steps), n = 1..max_ring.

    Vehicles only relocate (no demand).  ``policy(cells, step, rng)`` maps an
    array of cell indices to primitive actions; ``None``/``"random"`` is the
    uniform policy and an integer is a constant action.
    """
    if max_ring < 1:
        raise ValueError("max_ring must be >= 1")
    pick = _as_vector_policy(policy)
    rng = np.random.default_rng(rng)
    radius = max_ring + abs(origin[0]) + abs(origin[1]) + 1
    grid = HexGrid(GridSpec(radius=radius))
    o = grid.index[tuple(origin)]
    dist = grid.distance_matrix
    out = []
    for n in range(1, max_ring + 1):
        cells = np.full(trials, o)
        reached = np.zeros(trials, dtype=bool)
        for step in range(n):
            a = np.asarray(pick(cells, step, rng), dtype=np.int64)
            cells = grid.neighbor_table[cells, a]
            reached |= dist[o, cells] >= n
        out.append(float(reached.mean()))
    return out


def exact_ring_probability(n: int, p_actions=None) -> float:
    """Exact P(ring n within n steps) by enumerating every action sequence."""
    p = np.full(N_ACTIONS, 1.0 / N_ACTIONS) if p_actions is None else np.asarray(p_actions)
    grid = HexGrid(GridSpec(radius=n + 1))
    o = grid.index[(0, 0)]
    dist = grid.distance_matrix[o]
    # ring n is only reachable in n steps by moving outward every step
    frontier = {o: 1.0}
    for k in range(1, n + 1):
        nxt: dict[int, float] = {}
        for c, pr in frontier.items():
            for a in range(N_ACTIONS):
                d = int(grid.neighbor_table[c, a])
                if dist[d] == k:
                    nxt[d] = nxt.get(d, 0.0) + pr * p[a]
        frontier = nxt
    return float(sum(frontier.values()))


# -- demand-supply gap -------------------------------------------------------

@dataclass
class GapSnapshot:
    tick: int
    requests: np.ndarray   # open requests per cell
    vehicles: np.ndarray   # online vehicles per cell


def gap_snapshot(world) -> GapSnapshot:
    H = world.grid.n_cells
    req = np.zeros(H)
    for r in world.open.values():
        req[r.origin] += 1
    veh = np.zeros(H)
    for v in world.vehicles:
        if v.status != OFFLINE:
            veh[v.cell] += 1
    return GapSnapshot(world.t, req, veh)


def gap_grid(snapshots, times=None) -> dict[int, np.ndarray]:
    """Per-cell ``requests - vehicles`` at each requested tick.

    Negative values mean more vehicles than open requests.
    """
    by_tick = {s.tick: s for s in snapshots}
    times = sorted(by_tick) if times is None else times
    missing = [t for t in times if t not in by_tick]
    if missing:
        raise KeyError(f"no snapshot for ticks {missing}")
    return {t: by_tick[t].requests - by_tick[t].vehicles for t in times}


class GapRecorder:
    """Observer for :func:`run_episode` that keeps snapshots at chosen ticks."""

    def __init__(self, times):
        self.times = set(times)
        self.snapshots: list[GapSnapshot] = []

    def __call__(self, world):
        if world.t in self.times:
            self.snapshots.append(gap_snapshot(world))


def write_gap_csv(path, gaps: dict, grid: HexGrid):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "q", "r", "gap"])
        for t, g in gaps.items():
            for i, c in enumerate(grid.cells):
                w.writerow([t, c.q, c.r, float(g[i])])


# -- comparison table ----------------------------------------------------------

COLUMNS = (
    [(f"revenue_{p}", "max") for p in PERIOD_ORDER]
    + [(f"rejection_{p}", "min") for p in PERIOD_ORDER]
    + [("served_rate", "max")]
)


def metrics_row(model: str, m: Metrics) -> dict:
    row = {"model": model}
    for p in PERIOD_ORDER:
        row[f"revenue_{p}"] = round(m.periods[p].revenue_mean, 1)
        row[f"revenue_{p}_std"] = round(m.periods[p].revenue_std, 1)
    for p in PERIOD_ORDER:
        row[f"rejection_{p}"] = round(m.periods[p].rejection_rate, 1)
    row["served_rate"] = round(100.0 * m.served_rate, 1)
    return row


@dataclass
class Report:
    rows: list
    missing: list

    def to_markdown(self) -> str:
        cols = ["model"] + [c for c, _ in COLUMNS] + (["improvement_pct"] if self._has_imp() else [])
        best = {}
        for c, sense in COLUMNS:
            vals = [r[c] for r in self.rows]
            if vals:
                best[c] = max(vals) if sense == "max" else min(vals)
        lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        for r in self.rows:
            cells = []
            for c in cols:
                v = r.get(c, "")
                text = f"{v:.1f}" if isinstance(v, float) else str(v)
                if c in best and v == best[c] and len(self.rows) > 1:
                    text = f"**{text}**"
                cells.append(text)
            lines.append("| " + " | ".join(cells) + " |")
        if self.missing:
            lines.append("")
            lines.append("missing runs: " + ", ".join(self.missing))
        return "\n".join(lines) + "\n"

    def _has_imp(self):
        return any("improvement_pct" in r for r in self.rows)

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "missing": self.missing}, indent=1, sort_keys=True)

    def to_csv(self, path):
        keys = sorted({k for r in self.rows for k in r} - {"model"})
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["model"] + keys)
            w.writeheader()
            for r in self.rows:
                w.writerow(r)


def compare(runs, expected=None, reference="dqn") -> Report:
    """Table of per-model metrics with an improvement column against ``reference``.

    ``runs`` maps model name to :class:`Metrics` (or its dict form).  The
    improvement is the relative change of overall hourly revenue.
    """
    runs = {k: (Metrics.from_dict(v) if isinstance(v, dict) else v) for k, v in runs.items()}
    missing = [m for m in (expected or []) if m not in runs]
    rows = [metrics_row(k, runs[k]) for k in runs]
    if reference in runs:
        ref = runs[reference].periods["overall"].revenue_mean
        for r, k in zip(rows, runs):
            if k != reference and ref != 0:
                cur = runs[k].periods["overall"].revenue_mean
                r["improvement_pct"] = round(100.0 * (cur - ref) / abs(ref), 1)
    return Report(rows, missing)


def load_runs(directory) -> dict:
    """Read ``<model>.json`` metric files written by the CLI."""
    runs = {}
    for p in sorted(Path(directory).glob("*.json")):
        d = json.loads(p.read_text())
        if "periods" in d:
            runs[d.get("model", p.stem)] = d
    return runs


def rule_policy(kind: str, random_state=0):
    if kind == "random":
        return RandomRelocator(random_state)
    if kind == "greedy":
        return GreedyRelocator(random_state)
    raise ValueError(f"{kind!r} is not a rule policy")
