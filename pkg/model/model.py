from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from matcore.service import ComplexMatrix

Mode = Literal["diffusive", "counting"]


def as_controls(u) -> np.ndarray:
    return np.atleast_1d(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


@dataclass(frozen=True)
class AdmissibleRange:
    u_min: float
    u_max: float
    grid: tuple[float, ...]

    def contains(self, u, tol: float = 1e-12) -> np.ndarray:
        u = as_controls(u)
        return (u >= self.u_min - tol) & (u <= self.u_max + tol)

    def snap(self, u) -> np.ndarray:
        """Nearest grid control; ties go to the lower index."""
        grid = np.asarray(self.grid)
        idx = np.argmin(np.abs(as_controls(u)[:, None] - grid[None, :]), axis=1)
        return grid[idx]

    def violations(self) -> list[Violation]:
        out = []
        grid = np.asarray(self.grid, dtype=float)
        if self.u_min > self.u_max:
            out.append(Violation("range_invalid", f"u_min {self.u_min} > u_max {self.u_max}"))
        if grid.size == 0:
            out.append(Violation("range_invalid", "control grid is empty"))
            return out
        if np.any(np.diff(grid) <= 0):
            out.append(Violation("range_invalid", "control grid is not strictly increasing"))
        if grid[0] < self.u_min or grid[-1] > self.u_max:
            out.append(Violation("range_invalid", "control grid leaves [u_min, u_max]"))
        return out


@dataclass(frozen=True, eq=False)
class CoefficientMap:
    """
    Affine one-parameter family of controlled-flow coefficients:
    L(u) = l0 + u*l1, H(u) = h0 + u*h1, S constant,
    Xi constant, Upsilon(u) = upsilon0 * exp(-i*phase_rate*u).
    All maps are vectorized over u.
    """

    l0: ComplexMatrix
    l1: ComplexMatrix
    h0: ComplexMatrix
    h1: ComplexMatrix
    scattering: ComplexMatrix
    xi0: float = 0.0
    upsilon0: complex = 1.0
    phase_rate: float = 0.0

    @property
    def dim(self) -> int:
        return self.l0.shape[-1]

    def l(self, u) -> np.ndarray:
        u = as_controls(u)
        return self.l0[None] + u[:, None, None] * self.l1[None]

    def h(self, u) -> np.ndarray:
        u = as_controls(u)
        return self.h0[None] + u[:, None, None] * self.h1[None]

    def s(self, u) -> np.ndarray:
        u = as_controls(u)
        return np.broadcast_to(self.scattering, (u.size,) + self.scattering.shape)

    def xi(self, u) -> np.ndarray:
        return np.full(as_controls(u).size, float(self.xi0))

    def upsilon(self, u) -> np.ndarray:
        u = as_controls(u)
        return complex(self.upsilon0) * np.exp(-1j * self.phase_rate * u)

    def b(self, u) -> np.ndarray:
        """Jump operator Upsilon + Xi L."""
        u = as_controls(u)
        eye = np.eye(self.dim, dtype=np.complex128)
        return self.upsilon(u)[:, None, None] * eye + self.xi(u)[:, None, None] * self.l(u)


@dataclass(frozen=True, eq=False)
class SystemModel:
    name: str
    coeffs: CoefficientMap
    mode: Mode
    range: AdmissibleRange
    rho0: ComplexMatrix
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.coeffs.dim


@dataclass(frozen=True, eq=False)
class CostSpec:
    """C(u) = running_base + control_penalty * u**2 * I, terminal C_T."""

    running_base: ComplexMatrix
    terminal: ComplexMatrix
    control_penalty: float = 0.0

    def running(self, u) -> np.ndarray:
        u = as_controls(u)
        eye = np.eye(self.running_base.shape[-1], dtype=np.complex128)
        return self.running_base[None] + (self.control_penalty * u**2)[:, None, None] * eye

    def running_expectation(self, rho: np.ndarray, u) -> np.ndarray:
        """Tr[rho C(u)] for a stack of states."""
        u = as_controls(u)
        base = np.real(np.einsum("ij,nji->n", self.running_base, rho))
        return base + self.control_penalty * u**2 * np.real(np.trace(rho, axis1=-2, axis2=-1))

    def terminal_expectation(self, rho: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("ij,nji->n", self.terminal, rho))

    def scaled(self, a: float) -> "CostSpec":
        return CostSpec(a * self.running_base, a * self.terminal, a * self.control_penalty)

    @property
    def is_zero(self) -> bool:
        return (
            not np.any(self.running_base)
            and not np.any(self.terminal)
            and self.control_penalty == 0.0
        )
