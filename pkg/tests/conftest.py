import json

import numpy as np
import pytest

from matcore import service as mc
from model.model import CostSpec
from model.service import bloch_to_matrix, builtin_model, constant_model

ZERO2 = np.zeros((2, 2), dtype=np.complex128)


@pytest.fixture
def decay_homodyne():
    return builtin_model("decay_homodyne")


@pytest.fixture
def decay_counting():
    return builtin_model("decay_counting")


@pytest.fixture
def frozen():
    """L = 0, H = 0, diffusive with Upsilon = 1."""
    return constant_model(ZERO2, ZERO2, mode="diffusive", rho0=bloch_to_matrix([0.2, -0.1, 0.4]), u_max=1.0, control_grid=[-1.0, 0.0, 1.0])


@pytest.fixture
def state_prep_cost():
    """C(u) = |e><e| + 0.01 u^2 I, C_T = |e><e|."""
    return CostSpec(running_base=mc.EXCITED, terminal=mc.EXCITED, control_penalty=0.01)


@pytest.fixture
def zero_cost():
    return CostSpec(running_base=ZERO2, terminal=ZERO2, control_penalty=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_density(rng, d: int = 2) -> np.ndarray:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def write_config(tmp_path):
    def _write(document: dict, name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return str(path)

    return _write


@pytest.fixture
def make_rho(rng):
    return lambda d=2: random_density(rng, d)
