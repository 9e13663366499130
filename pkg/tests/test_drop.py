import math

import numpy as np
import pytest

from hexdrop.demand import synth_scenario
from hexdrop.drop import (DropOption, LegBatch, OptionExpired, OptionGenConfig, execute_step,
                          generate_options, pseudo_reward, tabular_q_iteration, train_options_on_batch)
from hexdrop.hexgrid import N_ACTIONS, GridSpec, HexGrid
from hexdrop.laplace import EmbedTrainConfig
from hexdrop.nn import DenseNet
from hexdrop.sim import Observation, Scenario, SimConfig, n_state_features
from simkit import random_assignments


def test_pseudo_reward_examples():
    assert pseudo_reward(1, [2.0, 0.0], [0.5, 0.0], 1, 1.0) == pytest.approx(2.5)
    assert pseudo_reward(3, [0.3, 0.4], [0.3, 0.4], 0, 1.0) == 0
    assert pseudo_reward(3, [1.0, 0.0], [0.0, 1.0], 0, 1.0) == pytest.approx(math.sqrt(2))
    assert pseudo_reward(2, [2.0], [0.5], 0, 0.0) == pytest.approx(-1.5)
    with pytest.raises(ValueError):
        pseudo_reward(4, [1.0], [1.0], 0, 1.0)


def test_infinite_alpha_ignores_embedding():
    rng = np.random.default_rng(0)
    ind = rng.integers(0, 2, size=20)
    ref = pseudo_reward(1, rng.normal(size=(20, 3)), rng.normal(size=(20, 3)), ind, math.inf)
    for k in (1, 2, 3):
        r = pseudo_reward(k, rng.normal(size=(20, 3)) * 9, rng.normal(size=(20, 3)), ind, math.inf)
        assert np.array_equal(r, ref)
    assert np.array_equal(ref, ind)


def _option(n_in=5, kind=1, horizon=5, **kw):
    return DropOption(0, kind, None, DenseNet([n_in, 8, N_ACTIONS], rng=0), horizon=horizon, **kw)


def _obs(n_cells=1):
    return Observation(np.zeros((3, n_cells)), 0, 0, 10)


def test_execute_step_examples():
    H = 1
    opt = _option(n_state_features(H))
    for W in opt.qnet.weights:
        W[:] = 0
    assert execute_step(opt, _obs(H), 0) == 0
    opt.qnet.biases[-1][4] = 1.0
    assert execute_step(opt, _obs(H), 4) == 4
    with pytest.raises(OptionExpired):
        execute_step(opt, _obs(H), 5)


def _legs(seed=0, episodes=2):
    spec = GridSpec(radius=2, speed=300)
    grid = HexGrid(spec)
    prof = synth_scenario(grid, [((1, 0), 0.2, 1, 1.0)], base_rate=0.01, hour_ticks=20, n_hours=4)
    sc = Scenario(SimConfig(grid=spec, n_vehicles=5, episode_ticks=80, hour_ticks=20), prof)
    legs = []
    for e in range(episodes):
        w = sc.make_world(seed + e)
        rng = np.random.default_rng(seed + e)
        while not w.done:
            legs += w.tick(random_assignments(w, rng)).legs
    return legs


CFG = OptionGenConfig(warmup_steps=30, batch_size=16, hidden=(8,), n_components=2,
                      embed_hidden=(8,), embed=EmbedTrainConfig(batch_size=8, steps=20))


def test_generate_options_default_kinds():
    legs = _legs()
    assert generate_options(legs, OptionGenConfig(n_options=0)) == []
    opts = generate_options(legs, CFG, episode=4, rng=0, first_id=10)
    assert [o.kind for o in opts] == [1, 2, 3]
    assert [o.id for o in opts] == [10, 11, 12]
    assert len({id(o.embedding) for o in opts}) == 1
    assert all(o.created_episode == 4 and o.horizon == 5 for o in opts)


def test_generate_options_deterministic():
    legs = _legs()
    a = generate_options(legs, CFG, rng=3)
    b = generate_options(legs, CFG, rng=3)
    assert all(x.qnet == y.qnet for x, y in zip(a, b))
    with pytest.raises(ValueError):
        generate_options([], CFG)


def test_embedding_frozen_while_options_train():
    legs = _legs()
    opts = generate_options(legs, CFG, rng=1)
    emb = opts[0].embedding
    before = emb.net_.copy()
    q_before = opts[0].qnet.copy()
    train_options_on_batch(opts, LegBatch.from_legs(legs[:16]))
    assert emb.net_ == before
    assert opts[0].qnet != q_before


def _fit_tabular(opt, next_state, rewards, steps=1500, sync=25):
    S, A = rewards.shape
    X = np.eye(S)
    s_idx, a_idx = np.divmod(np.arange(S * A), A)
    for i in range(steps):
        opt.update(X[s_idx], a_idx, rewards[s_idx, a_idx], X[next_state[s_idx, a_idx]], np.zeros(S * A))
        if (i + 1) % sync == 0:
            opt.sync_target()
    return opt.qnet.forward(X)


def _greedy_ok(Q_net, Q_star, tol=1e-6):
    best = Q_star.max(axis=1, keepdims=True)
    chosen = Q_net.argmax(axis=1)
    return bool(np.all(Q_star[np.arange(len(Q_star)), chosen] >= best[:, 0] - tol))


def test_scaling_embedding_keeps_greedy_policy():
    rng = np.random.default_rng(4)
    S = 7
    nxt = rng.integers(S, size=(S, N_ACTIONS))
    f = rng.normal(size=(S, 3))
    for scale in (1.0, 3.5):
        r = pseudo_reward(1, scale * f[:, None, :], scale * f[nxt], 0, 0.0)
        Q_star = tabular_q_iteration(nxt, r, 0.9)
        if scale == 1.0:
            base = Q_star.argmax(axis=1)
        else:
            assert np.array_equal(Q_star.argmax(axis=1), base)
        opt = DropOption(0, 1, None, DenseNet([S, 32, N_ACTIONS], rng=0), lr=1e-2)
        Q = _fit_tabular(opt, nxt, r)
        assert _greedy_ok(Q, Q_star, tol=1e-3 * scale)


def test_kind1_option_reaches_sink():
    grid = HexGrid(GridSpec(radius=2))
    sink = grid.cell_index((1, -1))
    dist = grid.distance_matrix[sink].astype(float)
    f = dist[:, None]                   # |f| decreases strictly toward the sink
    nxt = grid.neighbor_table
    r = pseudo_reward(1, f[:, None, :], f[nxt], 0, 0.0)
    Q_star = tabular_q_iteration(nxt, r, 0.9)
    opt = DropOption(0, 1, None, DenseNet([grid.n_cells, 64, N_ACTIONS], rng=0), lr=1e-2)
    Q = _fit_tabular(opt, nxt, r, steps=2500)
    for start in range(grid.n_cells):
        c = start
        for _ in range(int(dist[start])):
            c = nxt[c, int(Q[c].argmax())]
        assert c == sink, (start, c)
    assert np.allclose(Q_star.max(axis=1)[sink], 0.0, atol=1e-9)


def test_tabular_oracle_on_chain():
    # two states, action 1 moves 0 -> 1 with reward 1, everything else 0
    nxt = np.array([[0, 1], [1, 1]])
    r = np.array([[0.0, 1.0], [0.0, 0.0]])
    Q = tabular_q_iteration(nxt, r, 0.5)
    assert Q[0, 1] == pytest.approx(1.0) and Q[0, 0] == pytest.approx(0.5)
