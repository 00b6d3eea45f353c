import json

import numpy as np
import pytest

from core.exceptions import ConfigError
from matcore import service as mc
from model.model import AdmissibleRange, CostSpec
from model.service import (
    BUILTIN_MODELS,
    bloch_to_matrix,
    builtin_model,
    config_hash,
    constant_model,
    emit_config,
    load_config,
    matrix_to_bloch,
    validate,
)
from model.strategies import BangBangFeedback, ConstantControl, RandomSchedule, ScheduleControl

ZERO2 = np.zeros((2, 2))


def codes(model):
    return {v.code for v in validate(model)}


def test_bloch_poles():
    assert np.allclose(bloch_to_matrix([0, 0, 1]), mc.EXCITED)
    assert np.allclose(bloch_to_matrix([0, 0, -1]), mc.GROUND)
    assert np.allclose(bloch_to_matrix([0, 0, 0]), np.eye(2) / 2)


def test_bloch_coordinates_are_pauli_expectations(make_rho):
    rho = make_rho()
    x, y, z = matrix_to_bloch(rho)
    assert x == pytest.approx(np.trace(mc.PAULI_X @ rho).real)
    assert y == pytest.approx(np.trace(mc.PAULI_Y @ rho).real)
    assert z == pytest.approx(np.trace(mc.PAULI_Z @ rho).real)


def test_bloch_round_trip(rng, make_rho):
    rho = np.stack([make_rho() for _ in range(5)])
    assert np.allclose(bloch_to_matrix(matrix_to_bloch(rho)), rho, atol=1e-12)
    v = rng.uniform(-0.5, 0.5, size=(7, 3))
    assert np.allclose(matrix_to_bloch(bloch_to_matrix(v)), v, atol=1e-12)


def test_decay_homodyne_coefficients(decay_homodyne):
    c = decay_homodyne.coeffs
    assert decay_homodyne.mode == "diffusive"
    assert np.allclose(c.l(0.0)[0], mc.SIGMA_MINUS)
    assert np.allclose(c.h(2.0)[0], 2.0 * mc.PAULI_Y)
    assert c.xi(1.0)[0] == 0.0
    assert c.upsilon(1.0)[0] == 1.0
    assert validate(decay_homodyne) == []
    assert np.allclose(decay_homodyne.rho0, mc.EXCITED)


def test_decay_counting_coefficients(decay_counting):
    c = decay_counting.coeffs
    assert decay_counting.mode == "counting"
    assert c.xi(0.0)[0] == 1.0
    assert c.upsilon(0.0)[0] == pytest.approx(1e-3)
    assert np.allclose(c.b(0.0)[0], 1e-3 * np.eye(2) + mc.SIGMA_MINUS)
    assert validate(decay_counting) == []


@pytest.mark.parametrize("mode", ["diffusive", "counting"])
@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_builtins_are_valid_over_the_range(name, mode):
    model = builtin_model(name, mode=mode)
    assert validate(model) == []
    # validate samples the whole admissible interval, endpoints included
    assert model.range.u_min == -5.0 and model.range.u_max == 5.0


def test_pure_photodetection_is_admitted():
    model = builtin_model("decay_counting", {"epsilon0": 0.0})
    assert model.coeffs.upsilon(0.0)[0] == 0.0
    assert validate(model) == []


def test_adaptive_measurement_counting_phase():
    model = builtin_model("adaptive_measurement", {"alpha": 2.0}, mode="counting")
    assert model.coeffs.upsilon(0.5)[0] == pytest.approx(2.0 * np.exp(-0.5j))
    assert np.allclose(model.coeffs.h(0.0)[0], mc.PAULI_X)


def test_coherent_feedback_shifts_l():
    model = builtin_model("coherent_feedback", {"gamma": 4.0})
    assert np.allclose(model.coeffs.l(0.5)[0], 2.0 * mc.SIGMA_MINUS + 0.5 * np.eye(2))


def test_builtin_errors():
    with pytest.raises(ConfigError):
        builtin_model("no_such_model")
    with pytest.raises(ConfigError):
        builtin_model("decay_homodyne", {"gamma": 0.0})
    with pytest.raises(ConfigError):
        builtin_model("decay_homodyne", {"dim": 3})
    with pytest.raises(ConfigError):
        builtin_model("decay_homodyne", mode="heterodyne")


def test_validate_reports_violations():
    assert "h_not_hermitian" in codes(constant_model(ZERO2, mc.SIGMA_PLUS))
    assert "xi_nonzero" in codes(constant_model(ZERO2, ZERO2, mode="diffusive", xi=1.0))
    assert "upsilon_nonzero" in codes(constant_model(ZERO2, ZERO2, mode="diffusive", upsilon=0.0))
    assert "xi_invertible" in codes(constant_model(ZERO2, ZERO2, mode="counting", xi=0.0))
    assert "rho0_invalid" in codes(constant_model(ZERO2, ZERO2, rho0=np.diag([2.0, -1.0])))


def test_validate_dimension_mismatch():
    model = constant_model(ZERO2, ZERO2, rho0=np.eye(3) / 3)
    assert "dim_mismatch" in codes(model)


def test_range_snapping_ties_go_low():
    r = AdmissibleRange(-1.0, 1.0, (-1.0, 0.0, 1.0))
    assert list(r.snap([0.5, -0.2, 0.9])) == [0.0, 0.0, 1.0]
    assert r.violations() == []
    assert AdmissibleRange(1.0, -1.0, (0.0,)).violations()[0].code == "range_invalid"


def test_cost_running():
    cost = CostSpec(mc.EXCITED, mc.GROUND, control_penalty=0.5)
    assert np.allclose(cost.running(2.0)[0], mc.EXCITED + 2.0 * np.eye(2))
    rho = np.stack([mc.EXCITED, mc.GROUND])
    assert np.allclose(cost.running_expectation(rho, [0.0, 1.0]), [1.0, 0.5])
    assert np.allclose(cost.terminal_expectation(rho), [0.0, 1.0])
    assert cost.scaled(2.0).control_penalty == 1.0


def test_load_config_defaults():
    model, cost, config = load_config(json.dumps({"model": {"name": "decay_homodyne"}}))
    assert model.name == "decay_homodyne"
    assert config.run.scheme == "kraus"
    assert len(model.range.grid) == 11
    assert cost.control_penalty == pytest.approx(0.01)


def test_load_config_rho0_and_mode():
    doc = {"model": {"name": "decay_homodyne", "mode": "counting", "rho0": {"bloch": [0, 0, -1]}}}
    model, _, _ = load_config(json.dumps(doc))
    assert model.mode == "counting"
    assert np.allclose(model.rho0, mc.GROUND)


def test_load_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="model.colour"):
        load_config(json.dumps({"model": {"name": "decay_homodyne", "colour": "red"}}))


def test_load_config_names_field():
    doc = {"model": {"name": "decay_homodyne", "params": {"gamma": -1}}}
    with pytest.raises(ConfigError, match="model.params.gamma"):
        load_config(json.dumps(doc))


def test_load_config_parse_error_position():
    with pytest.raises(ConfigError, match="line 2"):
        load_config('{"model":\n {"name": }}')


def test_load_config_step_count():
    doc = {"model": {"name": "decay_homodyne"}, "run": {"T": 1.0, "dt": 0.3}}
    with pytest.raises(ConfigError, match="T/dt"):
        load_config(json.dumps(doc))


def test_overrides_and_seed_change_hash():
    text = json.dumps({"model": {"name": "decay_homodyne"}})
    _, _, base = load_config(text)
    _, _, changed = load_config(text, ["run.dt=2e-3"])
    _, _, seeded = load_config(text, seed=7)
    assert changed.run.dt == 2e-3
    assert seeded.run.seed == 7
    assert len({config_hash(base), config_hash(changed), config_hash(seeded)}) == 3
    assert config_hash(base) == config_hash(load_config(text)[2])


def test_bad_override():
    with pytest.raises(ConfigError):
        load_config(json.dumps({"model": {"name": "decay_homodyne"}}), ["run.dt"])


def test_open_loop_strategies():
    rho = np.stack([mc.EXCITED] * 3)
    assert np.all(ConstantControl(1.5).controls(0, 0.0, rho, np.zeros((3, 0))) == 1.5)
    schedule = ScheduleControl([0.0, 1.0, 2.0])
    assert schedule.value(1, 0.1) == 1.0
    assert schedule.value(10, 1.0) == 2.0
    assert schedule.as_function(0.1)(0.15) == 1.0


def test_random_schedule_is_reproducible():
    grid = (-1.0, 0.0, 1.0)
    a = [RandomSchedule(grid, seed=3).value(k, 0.0) for k in range(50)]
    b = [RandomSchedule(grid, seed=3).value(k, 0.0) for k in range(50)]
    assert a == b
    assert set(a) <= set(grid)
    assert len(set(a)) > 1


def test_bang_bang_feedback():
    strategy = BangBangFeedback(5.0, window=2)
    rho = np.stack([mc.EXCITED] * 3)
    history = np.array([[1.0, 0.1, 0.2], [0.0, -0.3, 0.1], [0.0, 0.0, 0.0]])
    assert np.all(strategy.controls(0, 0.0, rho, history[:, :0]) == 0.0)
    assert list(strategy.controls(3, 0.3, rho, history)) == [5.0, -5.0, 0.0]
    assert strategy.variant == "path_feedback"


def test_emitted_config_reloads_unchanged():
    doc = {
        "model": {
            "name": "adaptive_measurement",
            "mode": "counting",
            "params": {"alpha": 0.5, "omega": 2.0},
            "rho0": {"matrix": [[0.5, [0.0, 0.25]], [[0.0, -0.25], 0.5]]},
        },
        "cost": {"control_penalty": 0.1},
        "run": {"T": 0.5, "dt": 1e-3, "seed": 11},
        "bellman": {"grid_n": 21, "time_steps": 50},
    }
    model, cost, config = load_config(json.dumps(doc))
    model2, cost2, config2 = load_config(emit_config(config))
    assert config2.model_dump() == config.model_dump()
    assert emit_config(config2) == emit_config(config)
    assert config_hash(config2) == config_hash(config)
    assert np.allclose(model2.rho0, model.rho0)
    assert model2.rho0[0, 1] == pytest.approx(0.25j)
    assert cost2.control_penalty == cost.control_penalty
