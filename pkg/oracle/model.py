from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel

Measurement = Literal["quadrature", "number"]


@dataclass(frozen=True, eq=False)
class StepKraus:
    """
    Measurement operators of one repeated-interaction step, acting on the system.
    operators: (k, d, d); dy: observation increment recorded for each outcome.
    """

    labels: tuple[str, ...]
    operators: np.ndarray
    dy: np.ndarray

    @property
    def outcomes(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.labels, self.operators))

    def effects(self) -> np.ndarray:
        return np.conj(np.swapaxes(self.operators, -1, -2)) @ self.operators

    def completeness_defect(self) -> float:
        d = self.operators.shape[-1]
        return float(np.max(np.abs(self.effects().sum(axis=0) - np.eye(d))))

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        """Tr[M_j* M_j rho] for a stack of states: (n, k)."""
        return np.real(np.einsum("kij,nji->nk", self.effects(), rho))


class OracleRow(BaseModel):
    dt: float
    median: float
    max: float
    distances: list[float]


class OracleReport(BaseModel):
    mode: str
    measurement: Measurement
    strategy: str
    scheme: str
    rows: list[OracleRow]
    ratios: list[float]
    max_ratio: float
    passed: bool
