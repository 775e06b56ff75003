"""Small linear-algebra helpers used across modules.

All symmetric-matrix roots go through eigendecompositions so that the
rank handling is explicit and identical everywhere.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError

# Eigenvalues below this floor are clamped before inversion in the
# full-rank code paths.
EIG_FLOOR = 1e-12
# Relative cutoff that defines numerical rank for pseudo-inverse paths.
RANK_RTOL = 1e-10


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        v = v.reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    a = check_square(a)
    return 0.5 * (a + a.T)


def eigh_desc(a: np.ndarray):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    lam, vec = np.linalg.eigh(symmetrize(a))
    return lam[::-1], vec[:, ::-1]


def sym_sqrt(a: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(symmetrize(a))
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ vec.T


def sym_inv_sqrt(a: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Inverse square root with eigenvalues clamped at `floor`."""
    lam, vec = np.linalg.eigh(symmetrize(a))
    lam = np.clip(lam, floor, None)
    return (vec / np.sqrt(lam)) @ vec.T


def sym_pinv_sqrt(a: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Pseudo-inverse square root: eigenvalues below rtol*max are dropped."""
    lam, vec = np.linalg.eigh(symmetrize(a))
    lmax = float(lam.max()) if lam.size else 0.0
    cut = rtol * max(lmax, 0.0)
    inv = np.where(lam > cut, 1.0 / np.sqrt(np.clip(lam, cut if cut > 0 else 1.0, None)), 0.0)
    if cut == 0.0:
        inv = np.zeros_like(lam)
    return (vec * inv) @ vec.T


def numerical_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    lam = np.linalg.eigvalsh(symmetrize(a))
    lmax = float(np.max(np.abs(lam))) if lam.size else 0.0
    if lmax == 0.0:
        return 0
    return int(np.sum(lam > rtol * lmax))


def row_space_split(a: np.ndarray, x: np.ndarray, rtol: float = RANK_RTOL):
    """Split x into its components inside and outside the row space of a.

    a is symmetric PSD; the row space is the span of eigenvectors whose
    eigenvalue exceeds rtol * lambda_max.
    """
    lam, vec = np.linalg.eigh(symmetrize(a))
    lmax = float(np.max(np.abs(lam))) if lam.size else 0.0
    keep = lam > rtol * lmax if lmax > 0 else np.zeros_like(lam, dtype=bool)
    basis = vec[:, keep]
    inside = basis @ (basis.T @ x)
    return inside, x - inside


def orthonormal_null_basis(b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the null space of b^T (directions losing no
    treatment variation to the factors), as columns of a k x (k-rank) matrix.

    Column signs follow the convention that the largest-magnitude entry is
    positive, ties broken by lowest index.
    """
    b = np.asarray(b, dtype=float)
    u, s, _ = np.linalg.svd(b, full_matrices=True)
    smax = s.max() if s.size else 0.0
    rank = int(np.sum(s > rtol * max(smax, 1.0) * (smax > 0)))
    basis = u[:, rank:]
    return fix_column_signs(basis)


def fix_column_signs(v: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-magnitude entry is positive.

    Ties broken by the lowest row index (argmax returns the first maximum).
    """
    v = np.array(v, dtype=float, copy=True)
    for j in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return v
