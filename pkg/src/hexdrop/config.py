"""Run configuration files (YAML or JSON) with strict key checking.

Schema (every section and key is optional; defaults in brackets)::

    grid:     {radius [5], pitch [600.0], speed [600.0]}
    sim:      {n_vehicles [20], episode_ticks [1440], hour_ticks [60], max_wait [5],
               max_pickup [8, null = unlimited], beta [[1, 0.1, 0.0002]], fare_base,
               fare_per_km, fare_per_min, wait_penalty, gamma [0.99], entry_window [30],
               match_priority ["longest_wait"]}
    demand:   {mode ["poisson" | "replay"], trips [path], tick_seconds [60],
               projection {x0, y0, scale}, base_rate [0.0],
               hotspots [[[q, r], peak, peak_hour, width], ...]}
    model:    one of the policy kinds ["drdqn"]
    seeds:    [0]
    episodes: [10]
    eval:     {days [1], seeds [[1000]]}
    train:    keyword arguments of DropRelocator (except model/episodes/random_state)
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .demand import Projection, build_profile, load_trips, synth_scenario
from .hexgrid import GridSpec, HexCoord, HexGrid
from .policy import MODEL_KINDS, DropRelocator
from .sim import Scenario, SimConfig


class ConfigError(ValueError):
    pass


TOP_KEYS = {"grid", "sim", "demand", "model", "seeds", "episodes", "eval", "train"}
DEMAND_KEYS = {"mode", "trips", "tick_seconds", "projection", "base_rate", "hotspots"}
EVAL_KEYS = {"days", "seeds"}
TRAIN_EXCLUDED = {"model", "episodes", "random_state"}


def _check_keys(section: str, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")


@dataclass
class RunConfig:
    grid: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    demand: dict = field(default_factory=dict)
    model: str = "drdqn"
    seeds: list = field(default_factory=lambda: [0])
    episodes: int = 10
    eval: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), repr=False)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        _check_keys("config", d, TOP_KEYS)
        return cls(**d, base_dir=Path(base_dir))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def validate(self):
        _check_keys("grid", self.grid, {f.name for f in dataclasses.fields(GridSpec)})
        _check_keys("sim", self.sim, {f.name for f in dataclasses.fields(SimConfig)} - {"grid"})
        _check_keys("demand", self.demand, DEMAND_KEYS)
        _check_keys("eval", self.eval, EVAL_KEYS)
        train_keys = set(DropRelocator().get_params()) - TRAIN_EXCLUDED
        _check_keys("train", self.train, train_keys)
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model: unknown kind {self.model!r}; expected one of {list(MODEL_KINDS)}")
        mode = self.demand.get("mode", "poisson")
        if mode not in ("poisson", "replay"):
            raise ConfigError(f"demand.mode: expected 'poisson' or 'replay', got {mode!r}")
        if mode == "replay" and "trips" not in self.demand:
            raise ConfigError("demand.trips is required for replay mode")
        if not isinstance(self.seeds, list) or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds: expected a list of integers")
        if not isinstance(self.episodes, int) or self.episodes < 0:
            raise ConfigError("episodes: expected a non-negative integer")
        try:
            self.sim_config()
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    # builders -----------------------------------------------------------------
    def grid_spec(self) -> GridSpec:
        return GridSpec(**self.grid)

    def sim_config(self) -> SimConfig:
        sim = dict(self.sim)
        if "beta" in sim:
            sim["beta"] = tuple(sim["beta"])
        return SimConfig(grid=self.grid_spec(), **sim)

    def scenario(self) -> Scenario:
        cfg = self.sim_config()
        grid = HexGrid(cfg.grid)
        d = self.demand
        n_hours = -(-cfg.episode_ticks // cfg.hour_ticks)
        if d.get("mode", "poisson") == "replay" or "trips" in d:
            proj = Projection(**d["projection"]) if "projection" in d else Projection()
            trips = load_trips(self.base_dir / d["trips"], grid, proj,
                               tick_seconds=d.get("tick_seconds", 60),
                               episode_ticks=cfg.episode_ticks)
            if d.get("mode", "poisson") == "replay":
                return Scenario(cfg, trips=trips, mode="replay")
            profile = build_profile(trips, grid, cfg.hour_ticks, n_hours)
            return Scenario(cfg, profile=profile)
        hotspots = [(HexCoord(*h[0]), float(h[1]), float(h[2]), float(h[3]))
                    for h in d.get("hotspots", [])]
        profile = synth_scenario(grid, hotspots, d.get("base_rate", 0.0), cfg.hour_ticks, n_hours)
        return Scenario(cfg, profile=profile)

    def estimator(self, model=None, seed=None) -> DropRelocator:
        params = dict(self.train)
        for k in ("hidden", "option_hidden", "embed_hidden"):
            if k in params:
                params[k] = tuple(params[k])
        return DropRelocator(model=model or self.model, episodes=self.episodes,
                             random_state=self.seeds[0] if seed is None else seed, **params)

    @property
    def eval_days(self) -> int:
        return int(self.eval.get("days", 1))

    @property
    def eval_seeds(self) -> list:
        return list(self.eval.get("seeds", [1000]))
