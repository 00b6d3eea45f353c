import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from core.exceptions import ControlRangeError, EmptyEnsembleError, NumericalError
from lindblad.service import integrate
from matcore import service as mc
from model.service import bloch_to_matrix, constant_model, matrix_to_bloch
from model.strategies import BangBangFeedback, ConstantControl
from sme.service import (
    BlochMoments,
    diffusive_update,
    drift_lindblad,
    ensemble_bloch_stats,
    filter_record,
    generate_trajectory,
    innovations_martingale_stat,
    jump_intensity,
    jump_update,
    keep_observations,
    run_ensemble,
    simulate_batch,
    step_diffusive,
    step_jump,
    trajectory_frame,
)

ZERO2 = np.zeros((2, 2))


def photodetection(l=mc.SIGMA_MINUS, upsilon=0.0, rho0=None):
    return constant_model(l, ZERO2, mode="counting", xi=1.0, upsilon=upsilon, rho0=rho0)


def test_drift_of_excited_decay(decay_homodyne):
    out = drift_lindblad(mc.EXCITED, 0.0, decay_homodyne)
    assert np.allclose(out, mc.GROUND - mc.EXCITED)


def test_drift_is_traceless_and_hermitian(decay_homodyne, make_rho):
    out = drift_lindblad(make_rho(), 1.3, decay_homodyne)
    assert abs(np.trace(out)) < 1e-14
    assert mc.is_hermitian(out)


def test_drift_vanishes_without_dynamics(frozen, make_rho):
    assert np.allclose(drift_lindblad(make_rho(), 0.0, frozen), 0.0)


@pytest.mark.parametrize("scheme", ["euler", "kraus"])
def test_diffusive_step_without_dynamics(frozen, scheme):
    rho, dy = step_diffusive(frozen, frozen.rho0, 0.0, 1e-3, 0.05, scheme)
    assert np.allclose(rho, frozen.rho0, atol=1e-15)
    assert dy == pytest.approx(0.05)


def test_euler_step_matches_bloch_equations(decay_homodyne):
    x, y, z = 0.3, -0.2, 0.4
    dt, dW, gamma = 1e-3, 0.02, 1.0
    rho, dy = step_diffusive(decay_homodyne, bloch_to_matrix([x, y, z]), 0.0, dt, dW, "euler")
    expected = [
        x - gamma / 2 * x * dt + np.sqrt(gamma) * (1 + z - x**2) * dW,
        y - gamma / 2 * y * dt - np.sqrt(gamma) * x * y * dW,
        z - gamma * (1 + z) * dt - np.sqrt(gamma) * x * (1 + z) * dW,
    ]
    assert np.allclose(matrix_to_bloch(rho), expected, atol=1e-10)
    assert dy == pytest.approx(dW + np.sqrt(gamma) * x * dt)


def test_kraus_step_stays_a_state(decay_homodyne, make_rho):
    for dW in (-5.0, -0.3, 0.0, 0.7, 8.0):
        rho, _ = step_diffusive(decay_homodyne, make_rho(), 3.0, 1e-2, dW, "kraus")
        assert mc.is_density_matrix(rho, tol_positive=1e-12)


def test_diffusive_step_errors():
    model = constant_model(mc.SIGMA_MINUS, ZERO2, upsilon=0.0)
    with pytest.raises(NumericalError):
        step_diffusive(model, model.rho0, 0.0, 1e-3, 0.1)
    frozen = constant_model(ZERO2, ZERO2)
    with pytest.raises(NumericalError):
        step_diffusive(frozen, frozen.rho0, 0.0, 1e-3, np.inf)


def _mean_scheme_gap(model, rho, u, dt, nodes=40):
    """|E[kraus step] - E[euler step]| over dW ~ N(0, dt), by Gauss-Hermite quadrature."""
    x, w = hermegauss(nodes)
    w = w / w.sum()
    n = x.size
    rhos = np.broadcast_to(rho, (n, 2, 2))
    dW = np.sqrt(dt) * x
    kraus, _ = step_diffusive(model, rhos, np.full(n, u), dt, dW, "kraus")
    euler, _ = step_diffusive(model, rhos, np.full(n, u), dt, dW, "euler")
    return np.max(np.abs(np.tensordot(w, kraus - euler, axes=1)))


def test_schemes_agree_to_second_order_in_mean(decay_homodyne, make_rho):
    for _ in range(3):
        rho = make_rho()
        coarse = _mean_scheme_gap(decay_homodyne, rho, 0.7, 1e-3)
        fine = _mean_scheme_gap(decay_homodyne, rho, 0.7, 5e-4)
        assert coarse / fine >= 3.5


def test_no_jump_schemes_agree_to_second_order(decay_counting, make_rho):
    rho = make_rho()[None]
    gaps = []
    for dt in (1e-3, 5e-4):
        a = jump_update(decay_counting, rho, np.ones(1), dt, np.zeros(1, bool), "kraus")
        b = jump_update(decay_counting, rho, np.ones(1), dt, np.zeros(1, bool), "euler")
        gaps.append(np.max(np.abs(a - b)))
    assert gaps[0] / gaps[1] >= 3.5


def test_jump_from_excited():
    model = photodetection()
    assert jump_intensity(model, mc.EXCITED[None], np.zeros(1))[0] == pytest.approx(1.0)
    rho, jumped = step_jump(model, mc.EXCITED, 0.0, 0.01, [0.0])
    assert jumped == 1
    assert np.allclose(rho, mc.GROUND)


def test_dark_state_never_jumps():
    model = photodetection()
    assert jump_intensity(model, mc.GROUND[None], np.zeros(1))[0] == 0.0
    rho, jumped = step_jump(model, mc.GROUND, 0.0, 0.01, [0.0])
    assert jumped == 0
    assert np.allclose(rho, mc.GROUND)


def test_identity_jump_leaves_state(make_rho):
    model = photodetection(l=ZERO2, upsilon=1.0)
    rho = make_rho()
    assert jump_intensity(model, rho[None], np.zeros(1))[0] == pytest.approx(1.0)
    out, jumped = step_jump(model, rho, 0.0, 0.01, [0.0])
    assert jumped == 1
    assert np.allclose(out, rho)


def test_jump_precondition():
    model = photodetection()
    with pytest.raises(NumericalError):
        step_jump(model, mc.EXCITED, 0.0, 0.2, [0.5])
    with pytest.raises(NumericalError):
        step_jump(constant_model(ZERO2, ZERO2, mode="counting", xi=0.0), mc.EXCITED, 0.0, 1e-3, [0.5])


def test_trajectory_is_reproducible(decay_homodyne, state_prep_cost):
    a = generate_trajectory(decay_homodyne, BangBangFeedback(5.0), state_prep_cost, 0.2, 1e-3, seed=11)
    b = generate_trajectory(decay_homodyne, BangBangFeedback(5.0), state_prep_cost, 0.2, 1e-3, seed=11)
    c = generate_trajectory(decay_homodyne, BangBangFeedback(5.0), state_prep_cost, 0.2, 1e-3, seed=12)
    assert np.array_equal(a.dY, b.dY)
    assert np.array_equal(a.rho_path, b.rho_path)
    assert np.array_equal(a.running_costs, b.running_costs)
    assert not np.array_equal(a.dY, c.dY)


def test_frozen_trajectory(frozen):
    record = generate_trajectory(frozen, ConstantControl(0.0), None, 0.1, 1e-3, seed=0)
    assert record.n_steps == 100
    assert record.rho_path.shape == (101, 2, 2)
    assert np.allclose(record.rho_path, frozen.rho0)
    assert np.allclose(record.innovations, record.dY)
    assert np.std(record.dY) == pytest.approx(np.sqrt(1e-3), rel=0.3)


def test_counting_records_are_indicators(decay_counting):
    batch = simulate_batch(decay_counting, ConstantControl(0.0), 1.0, 1e-3, 5, np.arange(20))
    assert set(np.unique(batch.dY)) <= {0.0, 1.0}
    assert batch.dY.sum() > 0


def test_strategy_out_of_range(decay_homodyne):
    with pytest.raises(ControlRangeError):
        simulate_batch(decay_homodyne, ConstantControl(10.0), 0.01, 1e-3, 0, [0])


def test_kraus_invariants_along_trajectories(decay_homodyne):
    batch = simulate_batch(decay_homodyne, BangBangFeedback(5.0), 1.0, 1e-3, 3, np.arange(200))
    traces = np.trace(batch.rho_path, axis1=-2, axis2=-1)
    assert np.max(np.abs(traces - 1.0)) <= 1e-12
    assert np.min(np.linalg.eigvalsh(batch.rho_path)) >= -1e-12


def test_euler_negativity_shrinks_with_dt(decay_homodyne):
    """Euler leaves the state space by O(dt); the worst dip over an ensemble shrinks as dt does."""
    c = 10.0
    dips = []
    for dt in (4e-3, 1e-3):
        batch = simulate_batch(decay_homodyne, ConstantControl(0.0), 0.5, dt, 5, np.arange(50), "euler", "binary")
        min_eig = float(np.min(np.linalg.eigvalsh(mc.hermitian_part(batch.rho_path))))
        assert min_eig >= -c * dt, (dt, min_eig)
        dips.append(max(0.0, -min_eig))
    assert dips[1] <= dips[0]


def test_chunking_does_not_change_results(decay_homodyne):
    a = run_ensemble(decay_homodyne, BangBangFeedback(5.0), 0.1, 1e-3, 10, 4, chunk_size=3)
    b = run_ensemble(decay_homodyne, BangBangFeedback(5.0), 0.1, 1e-3, 10, 4, chunk_size=10)
    final_a = np.concatenate([p.rho_path[:, -1] for p in a])
    assert np.allclose(final_a, b[0].rho_path[:, -1], atol=1e-14)
    assert np.array_equal(np.concatenate([p.indices for p in a]), np.arange(10))


def test_worker_pool_matches_inline(decay_homodyne):
    inline = run_ensemble(decay_homodyne, ConstantControl(1.0), 0.05, 1e-3, 8, 2, BlochMoments(), chunk_size=4, jobs=1)
    pooled = run_ensemble(decay_homodyne, ConstantControl(1.0), 0.05, 1e-3, 8, 2, BlochMoments(), chunk_size=4, jobs=2)
    for a, b in zip(inline, pooled):
        assert a[0] == b[0]
        assert np.allclose(a[1], b[1], atol=1e-14)


def test_filter_record_reproduces_the_simulated_path(decay_homodyne, decay_counting):
    for model in (decay_homodyne, decay_counting):
        batch = simulate_batch(model, BangBangFeedback(5.0), 0.3, 1e-3, 9, np.arange(5))
        path = filter_record(model, batch.dY, batch.u_path, 1e-3, "kraus")
        assert np.allclose(path, batch.rho_path, atol=1e-10)


def test_diffusive_update_accepts_observations(decay_homodyne):
    rho = np.stack([mc.EXCITED, np.eye(2) / 2]).astype(complex)
    out = diffusive_update(decay_homodyne, rho, np.zeros(2), 1e-3, np.array([0.01, -0.01]))
    assert out.shape == (2, 2, 2)
    assert np.allclose(np.trace(out, axis1=-2, axis2=-1), 1.0)


def test_innovations_stat_without_dynamics(frozen):
    batch = simulate_batch(frozen, ConstantControl(0.0), 1.0, 1e-2, 0, np.arange(500))
    stats = innovations_martingale_stat(batch, 0.2, 0.5)
    mean, stderr = stats["1"]
    assert abs(mean) <= 4 * stderr


def test_innovations_stat_is_linear_in_g(decay_homodyne):
    batch = simulate_batch(decay_homodyne, ConstantControl(0.0), 0.5, 1e-2, 1, np.arange(50))
    stats = innovations_martingale_stat(batch, 0.2, 0.5, {"one": lambda y: np.ones(y.shape[0]), "two": lambda y: 2 * np.ones(y.shape[0])})
    assert stats["two"][0] == pytest.approx(2 * stats["one"][0], abs=1e-15)
    assert stats["two"][1] == pytest.approx(2 * stats["one"][1])


def test_innovations_stat_on_records(decay_homodyne):
    records = simulate_batch(decay_homodyne, ConstantControl(0.0), 0.5, 1e-2, 1, np.arange(20)).records()
    stats = innovations_martingale_stat(records, 0.1, 0.3)
    assert set(stats) == {"1", "Y_s", "sign(Y_s)"}
    with pytest.raises(EmptyEnsembleError):
        innovations_martingale_stat([], 0.1, 0.3)


def test_trajectory_frame(decay_homodyne):
    record = generate_trajectory(decay_homodyne, ConstantControl(0.0), None, 0.01, 1e-3, seed=0)
    frame = trajectory_frame(record)
    assert list(frame.columns) == ["t", "u", "dY", "innovation", "x", "y", "z"]
    assert len(frame) == 11
    assert np.isnan(frame["dY"].iloc[-1])
    assert frame["z"].iloc[0] == pytest.approx(1.0)


def _ensemble_matches_lindblad(model, n, T, dt, seed, width=3.0):
    parts = run_ensemble(model, ConstantControl(0.0), T, dt, n, seed, BlochMoments())
    mean, stderr, _ = ensemble_bloch_stats(parts)
    reference = matrix_to_bloch(integrate(model, None, model.rho0, T, dt))
    for t in (0.25, 0.5, 1.0):
        k = int(round(t / dt))
        if k < mean.shape[0]:
            assert np.all(np.abs(mean[k] - reference[k]) <= width * stderr[k] + 1e-12), t


def test_ensemble_mean_follows_lindblad_small(decay_homodyne):
    _ensemble_matches_lindblad(decay_homodyne, 2000, 0.5, 5e-3, 21, width=4.0)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["decay_homodyne", "decay_counting"])
def test_ensemble_mean_follows_lindblad(name, request):
    _ensemble_matches_lindblad(request.getfixturevalue(name), 10_000, 1.0, 1e-3, 0)


@pytest.mark.slow
def test_innovations_martingale_under_feedback(decay_homodyne):
    batch = run_ensemble(decay_homodyne, BangBangFeedback(5.0), 1.0, 1e-3, 10_000, 0, keep_observations)
    for s, t in ((0.2, 0.5), (0.5, 1.0)):
        for name, (mean, stderr) in innovations_martingale_stat(batch, s, t).items():
            assert abs(mean) <= 3 * stderr, (s, t, name)
