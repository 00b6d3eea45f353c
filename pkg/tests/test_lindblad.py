import numpy as np
import pytest

from lindblad.service import integrate, liouvillian, path_frame, propagate_exact
from matcore import service as mc
from model.service import bloch_to_matrix, constant_model, matrix_to_bloch
from sme.service import drift_lindblad

ZERO2 = np.zeros((2, 2))


def test_excited_population_decays(decay_homodyne):
    path = integrate(decay_homodyne, None, mc.EXCITED, 1.0, 1e-3)
    assert path.shape == (1001, 2, 2)
    assert np.real(path[-1, 0, 0]) == pytest.approx(np.exp(-1.0), abs=1e-8)


def test_frozen_state_is_constant(frozen):
    path = integrate(frozen, lambda t: 1.0, frozen.rho0, 0.5, 1e-2)
    assert np.allclose(path, frozen.rho0, atol=1e-15)


def test_precession_about_z():
    model = constant_model(ZERO2, mc.PAULI_Z)
    x0, y0, z0 = 0.6, 0.2, -0.3
    path = integrate(model, None, bloch_to_matrix([x0, y0, z0]), 2.0, 1e-3)
    t = np.arange(path.shape[0]) * 1e-3
    bloch = matrix_to_bloch(path)
    assert np.allclose(bloch[:, 0], x0 * np.cos(2 * t) - y0 * np.sin(2 * t), atol=1e-9)
    assert np.allclose(bloch[:, 1], y0 * np.cos(2 * t) + x0 * np.sin(2 * t), atol=1e-9)
    assert np.allclose(bloch[:, 2], z0, atol=1e-12)
    assert np.allclose(np.linalg.norm(bloch, axis=1), np.linalg.norm([x0, y0, z0]), atol=1e-9)


def test_rk4_is_fourth_order(decay_homodyne):
    rho0 = bloch_to_matrix([0.3, 0.1, 0.5])
    exact = propagate_exact(decay_homodyne, 1.0, rho0, [1.0])[0]
    errors = [np.max(np.abs(integrate(decay_homodyne, lambda t: 1.0, rho0, 1.0, dt)[-1] - exact)) for dt in (0.1, 0.05)]
    assert 16 / 3 <= errors[0] / errors[1] <= 48


def test_long_run_keeps_a_state(decay_homodyne):
    path = integrate(decay_homodyne, lambda t: 2.0 * np.sin(t), mc.EXCITED, 10.0, 1e-2)
    assert np.max(np.abs(np.trace(path, axis1=-2, axis2=-1) - 1.0)) <= 1e-10
    assert mc.is_hermitian(path, 1e-12)
    assert np.min(np.linalg.eigvalsh(mc.hermitian_part(path))) >= -1e-8


def test_liouvillian_acts_like_the_drift(decay_homodyne, make_rho):
    rho = make_rho()
    sup = liouvillian(decay_homodyne, 0.7)
    assert np.allclose(mc.unvec(sup @ mc.vec(rho), 2), drift_lindblad(rho, 0.7, decay_homodyne), atol=1e-14)


def test_exact_propagation_matches_rk4(decay_counting):
    path = integrate(decay_counting, lambda t: -1.5, decay_counting.rho0, 0.5, 1e-3)
    exact = propagate_exact(decay_counting, -1.5, decay_counting.rho0, [0.0, 0.25, 0.5])
    assert np.allclose(exact[0], decay_counting.rho0)
    assert np.allclose(exact[1], path[250], atol=1e-10)
    assert np.allclose(exact[2], path[500], atol=1e-10)


def test_path_frame(decay_homodyne):
    path = integrate(decay_homodyne, None, mc.EXCITED, 0.1, 1e-2)
    frame = path_frame(np.arange(11) * 1e-2, path)
    assert list(frame.columns) == ["t", "x", "y", "z"]
    assert frame["z"].iloc[0] == pytest.approx(1.0)
    assert frame["z"].iloc[-1] == pytest.approx(2 * np.exp(-0.1) - 1, abs=1e-8)
