import math

import numpy as np
import pytest

from liftpde import DomainShape, ProjectedGame, SchemeParams, Strategy, StrategyError, ValueField, build_grid
from liftpde.game import (GameState, block_length, exit_time_stats, score_from_moves, value_increments)
from liftpde.geometry import STRIP
from liftpde.kernel import derive_seed, quadrature_weights, trajectory_rng
from liftpde.verify import linear_ramp

from .conftest import solved


@pytest.fixture(scope="module")
def game_p3(ramp_p3):
    g, kw, params, res = ramp_p3
    return ProjectedGame(res.field, params, kw), res.field


def test_p2_only_noise(unit_interval):
    g, kw, params, res = solved(unit_interval, linear_ramp(unit_interval).boundary, 2.0, 0.1, 8)
    game = ProjectedGame(res.field, params, kw)
    s = Strategy.greedy_max(res.field)
    for i in range(50):
        t = game.run_trajectory(0.5, 0.0, s, Strategy.greedy_min(res.field), derive_seed(1, i))
        assert np.all(t.moves == 0)
        assert np.all(t.s == 0.0)


def test_termination_and_payoff(game_p3):
    game, field = game_p3
    g = field.grid
    sI, sII = Strategy.greedy_max(field), Strategy.greedy_min(field)
    for i in range(200):
        t = game.run_trajectory(0.3, 0.25, sI, sII, derive_seed(8, i))
        assert not t.censored
        assert g.labels[t.x[-1]] == STRIP
        assert np.all(g.labels[t.x[:-1]] != STRIP)
        assert t.tau == t.steps
        assert t.payoff == pytest.approx(field.values[t.x[-1]] + t.s[-1], abs=1e-14)
        assert score_from_moves(t, g.eps, g.coords) == pytest.approx(t.s[-1], abs=1e-12)
        jumps = np.abs(np.diff(t.s))
        assert np.all(jumps <= g.eps + 1e-15)
        assert np.all(jumps[t.moves == 0] == 0)


def test_replay_is_identical(game_p3):
    game, field = game_p3
    sI, sII = Strategy.greedy_max(field), Strategy.greedy_min(field)
    a = game.run_trajectory(0.3, 0.0, sI, sII, 777)
    b = game.run_trajectory(0.3, 0.0, sI, sII, 777)
    assert a.x.tobytes() == b.x.tobytes() and a.s.tobytes() == b.s.tobytes() and a.moves.tobytes() == b.moves.tobytes()


def test_fast_path_matches_recorded(game_p3):
    game, field = game_p3
    sI, sII = Strategy.greedy_max(field), Strategy.greedy_min(field)
    est = game.simulate(0.3, 0.1, sI, sII, 40, master_seed=5, workers=1)
    for i in range(40):
        t = game.run_trajectory(0.3, 0.1, sI, sII, derive_seed(5, i))
        assert est.payoffs[i] == t.payoff
        assert est.taus[i] == t.tau


def test_worker_count_does_not_change_results(game_p3):
    game, field = game_p3
    sI, sII = Strategy.greedy_max(field), Strategy.greedy_min(field)
    a = game.simulate(0.3, 0.0, sI, sII, 300, 11, workers=1)
    b = game.simulate(0.3, 0.0, sI, sII, 300, 11, workers=4)
    assert a.payoffs.tobytes() == b.payoffs.tobytes()
    assert a.mean == b.mean


def test_step_absorbs_and_stationary_tilt(game_p3):
    game, field = game_p3
    g = field.grid
    st = GameState(int(g.strip_ids[0]), 0.4, 3, True)
    assert game.step(st, Strategy.random_move(), Strategy.random_move(), trajectory_rng(0)) == st
    # pull toward own position: stationary strategic move changes s by exactly +/- eps
    x = g.nearest_node([0.5])
    stay = Strategy.pull_toward(g.coords[x])
    rng = trajectory_rng(3)
    seen = set()
    state = GameState(x, 0.0, 0, False)
    for _ in range(400):
        nxt = game.step(state, stay, stay, rng)
        ds = nxt.s - state.s
        if ds != 0:
            assert abs(abs(ds) - g.eps) <= 1e-15 and nxt.x == x
            seen.add(np.sign(ds))
        if nxt.terminated:
            break
        state = GameState(nxt.x, nxt.s, nxt.k, nxt.terminated) if nxt.x == x else GameState(x, nxt.s, nxt.k, False)
    assert seen == {1.0, -1.0}


def test_pull_toward_far_target_tilt_nonnegative(game_p3):
    game, field = game_p3
    g = field.grid
    far = Strategy.pull_toward([5.0])
    for i in range(30):
        t = game.run_trajectory(0.5, 0.0, far, far, derive_seed(2, i))
        d = np.diff(g.coords[t.x][:, 0])
        strategic = t.moves != 0
        assert np.all(np.abs(d[strategic]) <= g.eps + 1e-12)
        assert np.all(np.abs(np.diff(t.s))[strategic] >= 0)


def test_custom_strategy_outside_ball_faults(game_p3):
    game, field = game_p3
    g = field.grid
    sel = np.arange(g.n_nodes)
    x = g.nearest_node([0.5])
    sel[x] = x + 20
    with pytest.raises(StrategyError):
        game.run_trajectory(0.5, 0.0, Strategy("custom", selector=sel), Strategy.random_move(), 0)


def test_s0_shift_is_exact(game_p3):
    game, field = game_p3
    sI, sII = Strategy.greedy_max(field), Strategy.greedy_min(field)
    a = game.simulate(0.3, 0.0, sI, sII, 500, 21)
    b = game.simulate(0.3, 0.75, sI, sII, 500, 21)
    assert np.array_equal(a.taus, b.taus)
    assert np.abs((b.payoffs - a.payoffs) - 0.75).max() <= 1e-12


def test_greedy_value_and_weaker_player(game_p3):
    game, field = game_p3
    g = field.grid
    x0 = g.nearest_node([0.3])
    sI, sII = Strategy.greedy_max(field), Strategy.greedy_min(field)
    est = game.simulate(x0, 0.0, sI, sII, 20_000, 3)
    assert est.valid and est.n_censored == 0
    assert abs(est.mean - field(x0)) <= 3 * est.standard_error + 0.01
    assert est.standard_error == pytest.approx(np.nanstd(est.payoffs, ddof=1) / math.sqrt(20_000))
    weak = game.simulate(x0, 0.0, Strategy.random_move(), sII, 20_000, 3)
    assert weak.mean <= est.mean + 3 * est.standard_error


def test_martingale_increments(game_p3):
    game, field = game_p3
    sI, sII = Strategy.greedy_max(field), Strategy.greedy_min(field)
    trajs = [game.run_trajectory(0.3, 0.0, sI, sII, derive_seed(4, i)) for i in range(1500)]
    inc = value_increments(trajs, field)
    assert inc.size >= 100_000
    assert abs(inc.mean()) <= 4 * inc.std(ddof=1) / math.sqrt(inc.size)


def test_censoring_reported(game_p3):
    game, field = game_p3
    est = game.simulate(0.5, 0.0, Strategy.random_move(), Strategy.random_move(), 50, 1, cap=3)
    assert est.n_censored > 0 and not est.valid
    t = game.run_trajectory(0.5, 0.0, Strategy.random_move(), Strategy.random_move(), 1, cap=3)
    assert t.censored and t.tau is None and t.payoff is None


def test_continuum_mode_runs(unit_interval):
    F = linear_ramp(unit_interval).boundary
    g, kw, params, res = solved(unit_interval, F, 3.0, 0.1, 8)
    game = ProjectedGame(res.field, params, kw, mode="continuum", boundary_fn=F)
    sI, sII = Strategy.greedy_max(res.field, eta=0.01), Strategy.greedy_min(res.field, eta=0.01)
    est = game.simulate([0.3], 0.0, sI, sII, 2000, 9)
    assert est.valid
    assert abs(est.mean - res.field(g.nearest_node([0.3]))) <= 4 * est.standard_error + 0.03
    t = game.run_trajectory([0.3], 0.0, sI, sII, 4)
    assert not g.shape.contains(t.x[-1:])[0]
    assert g.shape.distance(t.x[-1:])[0] <= g.eps + 1e-12
    assert abs(score_from_moves(t, g.eps) - t.s[-1]) <= 1e-12


def test_block_length():
    assert block_length(DomainShape.box([0], [1]), 0.1) == 21
    assert block_length(DomainShape.box([0], [1]), 0.3) == 7
    assert block_length(DomainShape.ball([0, 0], 1), 0.2) == 21


def test_exit_time_stats(game_p3):
    game, field = game_p3
    est = game.simulate(0.5, 0.0, Strategy.random_move(), Strategy.random_move(), 5000, 2)
    N = block_length(field.grid.shape, field.grid.eps)
    s = exit_time_stats(est.taus, N, beta=game.params.beta, eps=field.grid.eps, n=1)
    assert s.tail[0] == 1.0
    assert s.tail_nonincreasing and s.within_geometric_band
    assert s.slope <= 0
    assert np.isfinite(s.mean_tau) and s.max_tau == est.taus.max()
    assert 0 < s.theory_delta < s.delta_hat
    with pytest.raises(ValueError):
        exit_time_stats([], N)
