import json

import pytest

from hexdrop.config import ConfigError, RunConfig
from hexdrop.policy import DropRelocator

TINY = """
grid: {radius: 2, speed: 300}
sim: {n_vehicles: 3, episode_ticks: 40, hour_ticks: 10, beta: [1, 0, 0]}
demand:
  base_rate: 0.02
  hotspots:
    - [[1, 0], 0.3, 1, 1.0]
model: dqn
episodes: 1
eval: {days: 1, seeds: [5, 6]}
train: {hidden: [8], warmup_steps: 5, batch_size: 8}
"""


def test_yaml_round_trip(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(TINY)
    cfg = RunConfig.load(p)
    assert cfg.sim_config().beta == (1.0, 0.0, 0.0)
    assert cfg.eval_seeds == [5, 6] and cfg.eval_days == 1
    est = cfg.estimator(seed=4)
    assert isinstance(est, DropRelocator) and est.hidden == (8,) and est.random_state == 4
    assert est.model == "dqn" and est.episodes == 1
    sc = cfg.scenario()
    assert sc.config.n_vehicles == 3
    cfg.dump(tmp_path / "c.json")
    again = RunConfig.load(tmp_path / "c.json")
    assert again.to_dict() == cfg.to_dict()


def test_defaults_build():
    cfg = RunConfig()
    assert cfg.sim_config().n_vehicles == 20
    assert cfg.eval_seeds == [1000]


@pytest.mark.parametrize("bad", [
    {"gird": {}},
    {"grid": {"radus": 3}},
    {"sim": {"vehicles": 3}},
    {"demand": {"hot": []}},
    {"train": {"episodes": 3}},
    {"eval": {"day": 1}},
    {"model": "ppo"},
    {"demand": {"mode": "replay"}},
    {"demand": {"mode": "stream"}},
    {"seeds": "0"},
    {"episodes": -1},
    {"sim": {"match_priority": "random"}},
    {"grid": []},
])
def test_rejects_bad_config(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_bad_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("grid: [unclosed")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_replay_and_profile_from_trips(tmp_path):
    (tmp_path / "trips.csv").write_text(
        "request_time,origin_x,origin_y,dest_x,dest_y\n0,0:0,,1:0,\n5,1:0,,0:0,\n99,0:0,,0:1,\n")
    base = {"grid": {"radius": 2}, "sim": {"episode_ticks": 20, "hour_ticks": 10}}
    cfg = RunConfig.from_dict({**base, "demand": {"mode": "replay", "trips": "trips.csv"}},
                              base_dir=tmp_path)
    sc = cfg.scenario()
    assert sc.mode == "replay" and len(sc.trips) == 2
    prof = RunConfig.from_dict({**base, "demand": {"trips": "trips.csv"}}, base_dir=tmp_path).scenario()
    assert prof.mode != "replay"
    json.dumps(cfg.to_dict())
