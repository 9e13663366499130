import json
import math

import numpy as np
import pytest

from hexdrop.demand import synth_scenario
from hexdrop.harness import (EpisodeStats, GapRecorder, Metrics, aggregate, compare, constant_policy,
                             dithering_curve, evaluate, exact_ring_probability, gap_grid, gap_snapshot,
                             load_runs, metrics_row, rule_policy, run_episode)
from hexdrop.hexgrid import GridSpec, HexGrid
from hexdrop.sim import Scenario, SimConfig
from simkit import cell, make_world, open_request


def play(world, policy=None, rng=0):
    rng = np.random.default_rng(rng)
    while not world.done:
        agents = world.decision_agents()
        world.tick(policy.assign(world, agents, rng) if policy and agents else {})
    return world


def test_zero_demand_gives_zero_revenue_and_undefined_rejection():
    w = play(make_world([0, 1], episode_ticks=48, hour_ticks=2, beta=(1, 0, 0)))
    m = aggregate([EpisodeStats.from_world(w)])
    for p in m.periods.values():
        assert p.revenue_mean == 0.0
        assert p.rejection_rate == 0.0 and not p.rejection_defined
    assert m.served_rate == 0.0 and m.arrivals == 0


def test_single_fare_lands_in_its_hour():
    g = HexGrid(GridSpec(3))
    o, d = cell(g, 0, 0), cell(g, 1, 0)
    w = make_world([o], schedule={90: [(o, d)]}, episode_ticks=240, hour_ticks=10, beta=(1, 0, 0),
                   fare_base=10, fare_per_km=0, fare_per_min=0, wait_penalty=0)
    e = EpisodeStats.from_world(play(w))
    assert e.revenue[9] == pytest.approx(10.0) and e.revenue.sum() == pytest.approx(10.0)
    m = aggregate([e])
    assert m.periods["peak"].revenue_mean == pytest.approx(10 / 4)
    assert m.periods["overall"].revenue_mean == pytest.approx(10 / 24)
    assert m.periods["offpeak"].revenue_mean == 0.0
    assert m.periods["peak"].rejection_rate == 0.0 and m.periods["peak"].rejection_defined
    assert not m.periods["night"].rejection_defined


def _scenario(n_vehicles=6, ticks=120):
    spec = GridSpec(radius=3, speed=300)
    grid = HexGrid(spec)
    prof = synth_scenario(grid, [((1, 0), 0.4, 2, 1.0)], base_rate=0.02, hour_ticks=20, n_hours=6)
    return Scenario(SimConfig(grid=spec, n_vehicles=n_vehicles, episode_ticks=ticks, hour_ticks=20), prof)


def test_accounting_identity_and_evaluate():
    sc = _scenario()
    m = evaluate(rule_policy("random"), sc, days=2, seeds=[1, 2])
    assert m.n_runs == 4
    assert m.served + m.rejected + m.pending == m.arrivals > 0
    for e in m.episodes:
        e.check_identity()
    bad = EpisodeStats(np.zeros(2), np.array([3.0, 0]), np.array([1.0, 0]), np.zeros(2), 0, 1)
    with pytest.raises(AssertionError):
        bad.check_identity()
    back = Metrics.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back.periods == m.periods and back.served_rate == m.served_rate


def test_run_episode_is_deterministic_and_greedy_lifts_pickup_cap():
    sc = _scenario()
    a = run_episode(rule_policy("random"), sc, seed=3, record_log=True)
    b = run_episode(rule_policy("random"), sc, seed=3, record_log=True)
    assert a.log_hash() == b.log_hash()
    g = run_episode(rule_policy("greedy"), sc, seed=3)
    assert g.config.max_pickup is None
    with pytest.raises(ValueError):
        rule_policy("dqn")


def test_dithering_oracle_values():
    assert exact_ring_probability(1) == pytest.approx(6 / 7)
    assert exact_ring_probability(2) == pytest.approx(18 / 49)
    curve = dithering_curve("random", max_ring=4, trials=100_000, rng=0)
    assert abs(curve[0] - 6 / 7) < 0.01
    assert abs(curve[1] - 18 / 49) < 0.01
    assert all(x >= y for x, y in zip(curve, curve[1:]))
    assert dithering_curve(1, max_ring=4, trials=100, rng=0) == [1.0] * 4
    assert dithering_curve(0, max_ring=2, trials=100, rng=0) == [0.0, 0.0]
    assert exact_ring_probability(3, p_actions=np.eye(7)[1]) == 1.0


def test_constant_policy_shape():
    pick = constant_policy(4)
    assert list(pick(np.zeros(3, dtype=int), 0, None)) == [4, 4, 4]


def test_gap_examples():
    empty = make_world([])
    s = gap_snapshot(empty)
    assert not s.requests.any() and not s.vehicles.any()

    w = make_world([0, 0, 0])
    open_request(w, 0, 5, wait=0)
    g = gap_grid([gap_snapshot(w)])[w.t]
    assert g[0] == -2 and np.count_nonzero(g) == 1


def test_gap_conservation_over_episode():
    sc = _scenario()
    times = [0, 30, 60, 119]
    rec = GapRecorder(times)
    w = run_episode(rule_policy("random"), sc, seed=0, observer=rec)
    grids = gap_grid(rec.snapshots, times)
    assert sorted(grids) == times
    for snap in rec.snapshots:
        assert grids[snap.tick].sum() == snap.requests.sum() - snap.vehicles.sum()
        assert snap.vehicles.sum() <= w.config.n_vehicles
    with pytest.raises(KeyError):
        gap_grid(rec.snapshots, [7])


def test_compare_report(tmp_path):
    sc = _scenario()
    m = evaluate(rule_policy("random"), sc, seeds=[0])
    single = compare({"random": m}, expected=["random", "dqn"])
    assert len(single.rows) == 1 and single.missing == ["dqn"]
    assert "missing runs: dqn" in single.to_markdown()

    rep = compare({"dqn": m, "drdqn": m.to_dict()})
    a, b = rep.rows
    assert {k: v for k, v in a.items() if k != "model"} == \
        {k: v for k, v in b.items() if k not in ("model", "improvement_pct")}
    assert b["improvement_pct"] == 0.0 and "improvement_pct" not in a
    assert "improvement_pct" in rep.to_markdown().splitlines()[0]
    row = metrics_row("x", m)
    assert row["served_rate"] == round(100 * m.served_rate, 1)

    rep.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("model,")
    for k in ("dqn", "drdqn"):
        (tmp_path / f"{k}.json").write_text(json.dumps({**m.to_dict(), "model": k}))
    (tmp_path / "other.json").write_text("{}")
    assert sorted(load_runs(tmp_path)) == ["dqn", "drdqn"]


def test_markdown_bolds_best():
    sc = _scenario()
    lo = evaluate(rule_policy("random"), sc, seeds=[0])
    hi = evaluate(rule_policy("greedy"), sc, seeds=[0])
    md = compare({"random": lo, "greedy": hi}).to_markdown()
    assert "**" in md and math.isfinite(hi.served_rate)
