import logging
from typing import Callable, Optional

import numpy as np
import pandas as pd

from matcore import service as mc
from model.model import SystemModel
from sme.service import drift_lindblad, n_steps, state_columns, state_values

logger = logging.getLogger("lindblad")


def _zero_control(t: float) -> float:
    return 0.0


def integrate(model: SystemModel, u_fn: Optional[Callable[[float], float]], rho0, T: float, dt: float) -> np.ndarray:
    """
    Fixed-step RK4 on d rho/dt = L(u) rho. The control is held at its
    left-endpoint value u_fn(t_k) over each step. Returns the (N+1, d, d) path.
    """
    u_fn = u_fn or _zero_control
    steps = n_steps(T, dt)
    rho = np.array(rho0 if rho0 is not None else model.rho0, dtype=np.complex128)
    path = np.empty((steps + 1,) + rho.shape, dtype=np.complex128)
    path[0] = rho

    for k in range(steps):
        u = float(u_fn(k * dt))
        k1 = drift_lindblad(rho, u, model)
        k2 = drift_lindblad(rho + 0.5 * dt * k1, u, model)
        k3 = drift_lindblad(rho + 0.5 * dt * k2, u, model)
        k4 = drift_lindblad(rho + dt * k3, u, model)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        path[k + 1] = rho
    return path


def liouvillian(model: SystemModel, u: float) -> np.ndarray:
    """Superoperator of L(u) acting on column-stacked density matrices."""
    h = model.coeffs.h(u)[0]
    l = model.coeffs.l(u)[0]
    d = model.dim
    eye = np.eye(d, dtype=np.complex128)
    ldl = l.conj().T @ l
    return (
        -1j * (np.kron(eye, h) - np.kron(h.T, eye))
        + np.kron(l.conj(), l)
        - 0.5 * (np.kron(eye, ldl) + np.kron(ldl.T, eye))
    )


def propagate_exact(model: SystemModel, u: float, rho0, times) -> np.ndarray:
    """Constant-control solution vec rho(t) = expm(t L) vec rho0 at each time."""
    sup = liouvillian(model, u)
    v0 = mc.vec(np.asarray(rho0, dtype=np.complex128))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    props = mc.expm(times[:, None, None] * sup[None])
    return mc.unvec(props @ v0, model.dim)


def path_frame(times: np.ndarray, path: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame({"t": times})
    values = state_values(path)
    for j, col in enumerate(state_columns(path.shape[-1])):
        frame[col] = values[:, j]
    return frame
