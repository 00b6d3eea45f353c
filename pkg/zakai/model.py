from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel


@dataclass(frozen=True, eq=False)
class LinearPath:
    """
    Unnormalized filter path. tau holds the rescaled states; the physical
    unnormalized state is exp(log_scale) * tau, so sigma_t(I) = exp(log_scale_t) Tr tau_t.
    Shapes: tau (n, N+1, d, d), log_scale (n, N+1).
    """

    tau: np.ndarray
    log_scale: np.ndarray

    def normalized(self) -> np.ndarray:
        tr = np.real(np.trace(self.tau, axis1=-2, axis2=-1))
        return self.tau / tr[..., None, None]

    def log_norm(self) -> np.ndarray:
        """log sigma_t(I) along the path."""
        tr = np.real(np.trace(self.tau, axis1=-2, axis2=-1))
        return self.log_scale + np.log(tr)


class KsRow(BaseModel):
    dt: float
    median: float
    max: float
    discrepancies: list[float]


class KsReport(BaseModel):
    mode: str
    strategy: str
    increments: str
    rows: list[KsRow]
    order: float
    ratios: list[float]
    min_order: float
    ratio_band: tuple[float, float]
    passed: bool
