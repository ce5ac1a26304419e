"""Dense symmetric linear algebra helpers shared by the design and simulation code."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class StructuralError(ValueError):
    """Raised when a matrix argument violates a structural precondition."""


def as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise StructuralError(f"expected a 2-d array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise StructuralError("matrix has non-finite entries")
    return m


def check_symmetric(m, rtol: float = 1e-9) -> np.ndarray:
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise StructuralError(f"matrix is not square: {m.shape}")
    scale = max(1.0, np.linalg.norm(m, "fro"))
    if np.linalg.norm(m - m.T, "fro") > rtol * scale:
        raise StructuralError("matrix is not symmetric within tolerance")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""

    values: np.ndarray
    vectors: np.ndarray


def sym_eig(m) -> SymEig:
    """Symmetric eigendecomposition with ascending eigenvalues and orthonormal columns."""
    sym = check_symmetric(m)
    values, vectors = np.linalg.eigh(sym)
    return SymEig(values=values, vectors=vectors)


def min_eig_margin(m) -> float:
    """Smallest eigenvalue of a symmetric matrix, used as the definiteness margin."""
    return float(sym_eig(m).values[0])


def psd_margin_tol(m) -> float:
    """Tolerance below which a definiteness margin does not count as strictly positive.

    Strict matrix inequalities are implemented as min_eig(M) >= psd_margin_tol(M);
    semidefinite ones as min_eig(M) >= -psd_margin_tol(M).
    """
    m = check_symmetric(m)
    return 1e-8 * (1.0 + float(np.linalg.norm(m, 2)))


def kron(a, b) -> np.ndarray:
    return np.kron(as_matrix(a), as_matrix(b))


def expm(m) -> np.ndarray:
    """Matrix exponential (scaling-and-squaring Pade, via scipy)."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise StructuralError(f"expm needs a square matrix, got {m.shape}")
    return scipy.linalg.expm(m)


def project_psd(m, floor: float = 0.0) -> np.ndarray:
    """Project a symmetric matrix onto {X = X^T : eig(X) >= floor}."""
    eig = sym_eig(m)
    clipped = np.maximum(eig.values, floor)
    out = (eig.vectors * clipped) @ eig.vectors.T
    return 0.5 * (out + out.T)
