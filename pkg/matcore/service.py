"""
Small dense complex-matrix algebra.

Every function accepts a single (d, d) matrix or a stack (..., d, d) and
returns fresh arrays; public results are marked read-only.
"""
import numpy as np
import numpy.typing as npt

from core.config import EXPM_TOL, TOL_EIG_INPUT, TOL_HERMITIAN, TOL_POSITIVE, TOL_TRACE, TOL_UNITARY
from core.exceptions import DimensionError, MatrixError, NumericalError

ComplexMatrix = npt.NDArray[np.complex128]

PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
# basis order (|e>, |g>): sigma_minus = |g><e|
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=np.complex128)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=np.complex128)
EXCITED = np.array([[1, 0], [0, 0]], dtype=np.complex128)
GROUND = np.array([[0, 0], [0, 1]], dtype=np.complex128)

for _m in (PAULI_X, PAULI_Y, PAULI_Z, SIGMA_MINUS, SIGMA_PLUS, EXCITED, GROUND):
    _m.setflags(write=False)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_matrix(a) -> ComplexMatrix:
    m = np.array(a, dtype=np.complex128)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise MatrixError(f"expected square matrix, got shape {m.shape}")
    return _frozen(m)


def identity(dim: int) -> ComplexMatrix:
    return _frozen(np.eye(dim, dtype=np.complex128))


def _same_dims(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def adjoint(a) -> ComplexMatrix:
    a = np.asarray(a)
    return _frozen(np.conj(np.swapaxes(a, -1, -2)).astype(np.complex128))


def matmul(a, b) -> ComplexMatrix:
    a, b = np.asarray(a), np.asarray(b)
    _same_dims(a, b)
    return _frozen(np.matmul(a, b).astype(np.complex128))


def trace(a):
    tr = np.trace(np.asarray(a), axis1=-2, axis2=-1)
    return complex(tr) if np.ndim(tr) == 0 else tr


def commutator(a, b) -> ComplexMatrix:
    a, b = np.asarray(a), np.asarray(b)
    _same_dims(a, b)
    return _frozen((a @ b - b @ a).astype(np.complex128))


def kron(a, b) -> ComplexMatrix:
    return _frozen(np.kron(np.asarray(a), np.asarray(b)).astype(np.complex128))


def vec(a) -> np.ndarray:
    """Column-stacking vectorization."""
    a = np.asarray(a)
    return np.swapaxes(a, -1, -2).reshape(a.shape[:-2] + (-1,))


def unvec(v, dim: int) -> ComplexMatrix:
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (dim, dim)), -1, -2)


def is_hermitian(a, tol: float = TOL_HERMITIAN) -> bool:
    a = np.asarray(a)
    return bool(np.max(np.abs(a - np.conj(np.swapaxes(a, -1, -2))), initial=0.0) <= tol)


def is_unitary(a, tol: float = TOL_UNITARY) -> bool:
    a = np.asarray(a)
    eye = np.eye(a.shape[-1])
    return bool(np.max(np.abs(np.conj(np.swapaxes(a, -1, -2)) @ a - eye), initial=0.0) <= tol)


def is_positive_semidefinite(a, tol: float = TOL_POSITIVE) -> bool:
    if not is_hermitian(a, tol=max(tol, TOL_HERMITIAN)):
        return False
    a = np.asarray(a)
    herm = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    return bool(np.min(np.linalg.eigvalsh(herm)) >= -tol)


def expm(a, tol: float = EXPM_TOL) -> ComplexMatrix:
    """
    Matrix exponential by scaling and squaring with a truncated Taylor series.
    The series is cut once the last term drops below tol / 2**s.
    """
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise MatrixError(f"expected square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("expm: non-finite entries")

    norm = float(np.max(np.abs(a).sum(axis=-2), initial=0.0))
    s = int(np.ceil(np.log2(norm / 0.5))) if norm > 0.5 else 0
    x = a / (2.0 ** s)

    eye = np.broadcast_to(np.eye(a.shape[-1], dtype=np.complex128), a.shape)
    result = eye.copy()
    term = eye.copy()
    cutoff = tol / (2.0 ** s)
    for k in range(1, 80):
        term = term @ x / k
        result = result + term
        if np.max(np.abs(term)) <= cutoff:
            break

    for _ in range(s):
        result = result @ result
    return _frozen(result)


def eig_hermitian(a, tol: float = TOL_EIG_INPUT):
    """
    Ascending real eigenvalues and orthonormal eigenvectors (as columns).
    """
    a = np.asarray(a, dtype=np.complex128)
    if not is_hermitian(a, tol=tol):
        raise MatrixError("eig_hermitian: input is not hermitian")
    herm = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    values, vectors = np.linalg.eigh(herm)
    return _frozen(values), _frozen(vectors)


def trace_distance(a, b):
    diff = np.asarray(a) - np.asarray(b)
    diff = 0.5 * (diff + np.conj(np.swapaxes(diff, -1, -2)))
    return 0.5 * np.abs(np.linalg.eigvalsh(diff)).sum(axis=-1)


def is_density_matrix(
    a,
    tol_hermitian: float = TOL_HERMITIAN,
    tol_trace: float = TOL_TRACE,
    tol_positive: float = TOL_POSITIVE,
) -> bool:
    a = np.asarray(a)
    if not is_hermitian(a, tol_hermitian):
        return False
    if np.max(np.abs(np.trace(a, axis1=-2, axis2=-1) - 1.0)) > tol_trace:
        return False
    return is_positive_semidefinite(a, tol_positive)


def density_matrix(a, **tols) -> ComplexMatrix:
    m = as_matrix(a)
    if not is_density_matrix(m, **tols):
        raise MatrixError("not a density matrix (hermitian, unit trace, positive)")
    return m


def hermitian_part(a) -> np.ndarray:
    a = np.asarray(a)
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
