"""Dense symmetric spectral linear algebra.

Eigendecompositions, thin SVD, fractional matrix powers, and the Gram /
cross-Gram products that define the input similarity geometry under a
preconditioner.  Everything here is a pure function of its arguments and
uses a deterministic sign convention, so repeated calls (including from
parallel workers) give bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymEig",
    "ThinSvd",
    "Preconditioner",
    "sym_eig",
    "thin_svd",
    "matrix_power",
    "gram",
    "cross_gram",
]

DEFAULT_EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class SymEig:
    """Eigenpairs of a symmetric matrix, eigenvalues descending."""

    eigenvalues: np.ndarray  # (d,)
    eigenvectors: np.ndarray  # (d, d), columns

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


@dataclass(frozen=True)
class ThinSvd:
    """Thin SVD X = left @ diag(singulars) @ right.T for a wide matrix."""

    left: np.ndarray  # (d, d)
    singulars: np.ndarray  # (d,), descending, nonnegative
    right: np.ndarray  # (n, d), orthonormal columns

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singulars) @ self.right.T


@dataclass(frozen=True)
class Preconditioner:
    """A PSD matrix power, remembering the exponent and eigenvalue floor."""

    matrix: np.ndarray  # (d, d), symmetric PSD
    power: float
    floor: float = DEFAULT_EIG_FLOOR


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eig(a: np.ndarray, sym_tol: float = 1e-10) -> SymEig:
    """Eigendecomposition of a symmetric matrix.

    Eigenvalues are returned in descending order with orthonormal column
    eigenvectors under the deterministic sign convention (largest-magnitude
    entry of each eigenvector is positive).

    Raises ValueError if ``a`` is not symmetric within ``sym_tol`` elementwise.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > sym_tol:
        raise ValueError(
            f"matrix is not symmetric: max |A - A^T| = {asym:.3e} exceeds {sym_tol:.1e}"
        )
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    order = np.argsort(w)[::-1]
    w = w[order]
    v = _fix_signs(v[:, order])
    return SymEig(eigenvalues=w, eigenvectors=v)


def thin_svd(x: np.ndarray) -> ThinSvd:
    """Thin SVD of a d x n matrix with d <= n.

    Returns d left singular vectors, d singular values (descending), and an
    n x d matrix of right singular vectors, with the same sign convention as
    :func:`sym_eig` applied to the left vectors.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {x.shape}")
    d, n = x.shape
    if d > n:
        raise ValueError(f"thin_svd requires d <= n, got {d} x {n}")
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return ThinSvd(left=u * signs, singulars=s, right=vt.T * signs)


def matrix_power(
    sigma: np.ndarray, p: float, floor: float = DEFAULT_EIG_FLOOR
) -> Preconditioner:
    """Raise a symmetric PSD matrix to a real power through its eigenbasis.

    For negative powers, eigenvalues are first clamped to
    ``max(lambda_i, floor * lambda_max)`` so a rank-deficient empirical
    covariance behaves like a damped pseudo-inverse.  No clamping is done for
    p >= 0.  ``p == 0`` returns the exact identity.
    """
    if floor < 0:
        raise ValueError(f"floor must be >= 0, got {floor}")
    sigma = np.asarray(sigma, dtype=float)
    if p == 0:
        # Exact identity keeps p = 0 runs bitwise equal to unpreconditioned GD.
        eye = np.eye(sigma.shape[0])
        return Preconditioner(matrix=eye, power=0.0, floor=floor)
    eig = sym_eig(sigma)
    lam = np.maximum(eig.eigenvalues, 0.0)
    if p < 0:
        lam_max = lam.max(initial=0.0)
        if lam_max <= 0.0:
            raise np.linalg.LinAlgError(
                "matrix_power: negative power of the zero matrix"
            )
        lam = np.maximum(lam, floor * lam_max)
        if lam.min() <= 0.0:
            raise np.linalg.LinAlgError(
                "matrix_power: negative power of a singular matrix with floor 0"
            )
    powered = (eig.eigenvectors * lam**p) @ eig.eigenvectors.T
    powered = (powered + powered.T) / 2.0
    return Preconditioner(matrix=powered, power=float(p), floor=floor)


def _precond_matrix(p: Preconditioner | np.ndarray) -> np.ndarray:
    return p.matrix if isinstance(p, Preconditioner) else np.asarray(p, dtype=float)


def gram(x: np.ndarray, precond: Preconditioner | np.ndarray) -> np.ndarray:
    """Gram matrix X^T P X of the training inputs in the P-metric."""
    x = np.asarray(x, dtype=float)
    m = _precond_matrix(precond)
    if x.shape[0] != m.shape[0] or m.shape[0] != m.shape[1]:
        raise ValueError(
            f"dimension mismatch: X is {x.shape}, preconditioner is {m.shape}"
        )
    g = x.T @ m @ x
    return (g + g.T) / 2.0


def cross_gram(
    x: np.ndarray, precond: Preconditioner | np.ndarray, point: np.ndarray
) -> np.ndarray:
    """Cross-Gram vector X^T P x of a single point against the training set."""
    x = np.asarray(x, dtype=float)
    m = _precond_matrix(precond)
    point = np.asarray(point, dtype=float).reshape(-1)
    if x.shape[0] != m.shape[0] or point.shape[0] != m.shape[0]:
        raise ValueError(
            f"dimension mismatch: X is {x.shape}, preconditioner is {m.shape}, "
            f"point is {point.shape}"
        )
    return x.T @ (m @ point)
