import numpy as np
import pytest

from bellman.model import StateGrid
from bellman.service import discretization_estimate, extract_policy, solve
from core.exceptions import ConfigError
from matcore import service as mc
from mc.model import CostEstimate
from mc.service import (
    compare_strategies,
    cost_to_go,
    costs_frame,
    evaluate_cost,
    separated_wins,
    trajectory_costs,
    value_consistency,
)
from model.model import CostSpec
from model.service import constant_model
from model.strategies import BangBangFeedback, ConstantControl, RandomSchedule
from sme.service import generate_trajectory, simulate_batch

ZERO2 = np.zeros((2, 2))


@pytest.fixture
def still():
    """No dynamics, rho0 = diag(0.3, 0.7)."""
    return constant_model(ZERO2, ZERO2, rho0=np.diag([0.3, 0.7]), u_max=1.0, control_grid=[-1.0, 0.0, 1.0])


@pytest.fixture
def decay_cost():
    return CostSpec(running_base=mc.EXCITED, terminal=ZERO2, control_penalty=0.0)


def test_cost_without_dynamics(still, state_prep_cost):
    result = evaluate_cost(still, ConstantControl(0.0), state_prep_cost, 1.0, 1e-3, 10, seed=0)
    assert result.mean == pytest.approx(0.6, abs=1e-10)
    assert result.stderr <= 1e-12
    assert result.n == 10


def test_control_penalty_is_charged(still, state_prep_cost):
    result = evaluate_cost(still, ConstantControl(1.0), state_prep_cost, 1.0, 1e-2, 4, seed=0)
    assert result.mean == pytest.approx(0.61, abs=1e-10)


def test_zero_cost(decay_homodyne, zero_cost):
    result = evaluate_cost(decay_homodyne, BangBangFeedback(5.0), zero_cost, 0.5, 1e-2, 20, seed=1)
    assert result.mean == 0.0
    assert result.stderr == 0.0


def test_needs_two_trajectories(decay_homodyne, state_prep_cost):
    with pytest.raises(ConfigError):
        evaluate_cost(decay_homodyne, ConstantControl(0.0), state_prep_cost, 0.1, 1e-2, 1, seed=0)


def test_cost_to_go(decay_homodyne, state_prep_cost):
    record = generate_trajectory(decay_homodyne, BangBangFeedback(5.0), state_prep_cost, 0.5, 1e-2, seed=2)
    total = record.running_costs.sum() * record.dt + record.terminal_cost
    assert cost_to_go(record, state_prep_cost, 0) == pytest.approx(total)
    assert cost_to_go(record, state_prep_cost, record.n_steps) == pytest.approx(record.terminal_cost)
    m = 20
    head = record.running_costs[:m].sum() * record.dt
    assert cost_to_go(record, state_prep_cost, 0) == pytest.approx(head + cost_to_go(record, state_prep_cost, m))
    with pytest.raises(ConfigError):
        cost_to_go(record, state_prep_cost, record.n_steps + 1)


def test_trajectory_costs_are_left_endpoint_sums(decay_homodyne, state_prep_cost):
    batch = simulate_batch(decay_homodyne, ConstantControl(2.0), 0.1, 1e-2, 0, np.arange(3), cost=state_prep_cost)
    expected = [
        sum(state_prep_cost.running_expectation(batch.rho_path[i, k][None], 2.0)[0] for k in range(10)) * 1e-2
        + state_prep_cost.terminal_expectation(batch.rho_path[i, -1][None])[0]
        for i in range(3)
    ]
    assert np.allclose(trajectory_costs(batch), expected)


def test_excited_decay_cost(decay_homodyne, decay_cost):
    dt = 1e-2
    result = evaluate_cost(decay_homodyne, ConstantControl(0.0), decay_cost, 1.0, dt, 400, seed=3)
    assert abs(result.mean - (1 - np.exp(-1.0))) <= 3 * result.stderr + 2 * dt


def test_stderr_shrinks_with_the_ensemble(decay_homodyne, state_prep_cost):
    small = evaluate_cost(decay_homodyne, ConstantControl(1.0), state_prep_cost, 0.5, 1e-2, 400, seed=4)
    large = evaluate_cost(decay_homodyne, ConstantControl(1.0), state_prep_cost, 0.5, 1e-2, 1600, seed=4)
    assert 1.6 <= small.stderr / large.stderr <= 2.5


def test_evaluation_is_reproducible(decay_counting, state_prep_cost):
    a = evaluate_cost(decay_counting, BangBangFeedback(5.0), state_prep_cost, 0.5, 1e-2, 30, seed=5)
    b = evaluate_cost(decay_counting, BangBangFeedback(5.0), state_prep_cost, 0.5, 1e-2, 30, seed=5)
    assert a.costs == b.costs
    assert all(c >= 0 for c in a.costs)


def test_panel_of_one(decay_homodyne, state_prep_cost):
    report = compare_strategies(decay_homodyne, state_prep_cost, [ConstantControl(0.0)], 0.2, 1e-2, 10, seed=0)
    assert report.ranking == ["u=0"]
    assert report.pairwise == []
    assert report.separated is None and report.separated_wins is None


def test_identical_strategies_share_noise(decay_homodyne, state_prep_cost):
    panel = [ConstantControl(1.0, name="a"), ConstantControl(1.0, name="b")]
    report = compare_strategies(decay_homodyne, state_prep_cost, panel, 0.2, 1e-2, 20, seed=6)
    row = report.pairwise[0]
    assert (row.a, row.b) == ("a", "b")
    assert row.difference == 0.0
    assert row.stderr == 0.0
    assert row.overlap


def test_panel_errors(decay_homodyne, state_prep_cost):
    with pytest.raises(ConfigError):
        compare_strategies(decay_homodyne, state_prep_cost, [], 0.1, 1e-2, 10, seed=0)
    with pytest.raises(ConfigError):
        compare_strategies(decay_homodyne, state_prep_cost, [ConstantControl(0.0, "x"), ConstantControl(1.0, "x")], 0.1, 1e-2, 10, seed=0)


def test_costs_frame(decay_homodyne, state_prep_cost):
    panel = [ConstantControl(0.0, name="zero"), RandomSchedule(decay_homodyne.range.grid, seed=1)]
    report = compare_strategies(decay_homodyne, state_prep_cost, panel, 0.1, 1e-2, 5, seed=0)
    frame = costs_frame(report)
    assert list(frame.columns) == ["strategy", "trajectory", "cost"]
    assert len(frame) == 10
    assert set(frame["strategy"]) == {"zero", "randomized"}


def _estimate(name, variant, mean, stderr):
    return CostEstimate(name=name, variant=variant, mean=mean, stderr=stderr, n=100)


def test_separated_wins_rule():
    sep = _estimate("separated", "separated", 0.3, 0.01)
    assert separated_wins([sep, _estimate("zero", "open_loop", 0.5, 0.01)]) == ("separated", True)
    assert separated_wins([sep, _estimate("close", "open_loop", 0.32, 0.01)]) == ("separated", False)
    assert separated_wins([_estimate("zero", "open_loop", 0.5, 0.01)]) == (None, None)


def test_consistency_for_zero_cost(decay_homodyne, zero_cost):
    vf = solve(decay_homodyne, zero_cost, StateGrid(5), 1.0, 4)
    report = value_consistency(decay_homodyne, zero_cost, vf, 20, seed=0, dt=1e-2)
    assert report.v0 == 0.0
    assert report.mc_mean == 0.0
    assert report.passed
    # 20 samples never fill a probe neighbourhood
    assert all(row.count < 30 and row.passed is None for row in report.probes)
    assert report.probes_evaluated == 0
    assert not report.probes_passed


def test_consistency_without_dynamics(still, state_prep_cost):
    vf = solve(still, state_prep_cost, StateGrid(5), 1.0, 4)
    assert np.all(extract_policy(vf).controls(0, 0.0, still.rho0[None], np.zeros((1, 0))) == 0.0)
    report = value_consistency(still, state_prep_cost, vf, 40, seed=0, dt=1e-2, eps_disc=0.05)
    assert report.v0 == pytest.approx(0.6, abs=1e-12)
    assert report.mc_mean == pytest.approx(0.6, abs=1e-10)
    assert report.passed
    assert len(report.probes) == 5
    assert all(row.count == 40 for row in report.probes)
    assert report.probes_evaluated == 5
    assert report.probes_passed


@pytest.mark.slow
def test_separated_policy_beats_the_panel(decay_homodyne, state_prep_cost):
    vf = solve(decay_homodyne, state_prep_cost, StateGrid(21), 1.0, 100)
    vf = vf.with_eps_disc(discretization_estimate(decay_homodyne, state_prep_cost, vf))
    u_max = decay_homodyne.range.u_max
    panel = [
        extract_policy(vf),
        ConstantControl(0.0),
        ConstantControl(u_max),
        ConstantControl(-u_max),
        RandomSchedule(decay_homodyne.range.grid, seed=0),
        BangBangFeedback(u_max),
    ]
    report = compare_strategies(decay_homodyne, state_prep_cost, panel, 1.0, 1e-2, 2000, seed=0)
    assert report.separated_wins, report.ranking
    consistency = value_consistency(decay_homodyne, state_prep_cost, vf, 2000, seed=1, dt=1e-2)
    assert consistency.passed, consistency.model_dump()
