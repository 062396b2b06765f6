"""Dense linear-algebra helpers and diagonal-weighted vector norms.

The three diagonal norms take the *diagonal* of a positive-definite matrix
as a 1-D array ``d`` (``d[i] = m_ii``), never the full matrix.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

SPD_RELATIVE_FLOOR = 1e-12
SYMMETRY_TOL = 1e-9


class CovarianceSingularError(np.linalg.LinAlgError):
    """Raised when a matrix that must be SPD fails factorization."""

    def __init__(self, message: str = "covariance singular", step: int | None = None):
        self.step = step
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)


def _check_pair(x, d):
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if x.ndim != 1 or d.shape != x.shape:
        raise ValueError(f"dimension mismatch: x{x.shape} vs diagonal{d.shape}")
    return x, d


def weighted_l2_norm(x, d) -> float:
    """sqrt(sum_i d_i x_i^2) for a strictly positive diagonal ``d``."""
    x, d = _check_pair(x, d)
    if np.any(d <= 0):
        raise ValueError("diagonal weights must be strictly positive")
    return float(np.sqrt(np.dot(d, x * x)))


def weighted_linf_norm(x, d) -> float:
    """max_i d_i |x_i|."""
    x, d = _check_pair(x, d)
    if x.size == 0:
        return 0.0
    return float(np.max(d * np.abs(x)))


def weighted_l1_norm(x, d) -> float:
    """sum_i d_i |x_i|."""
    x, d = _check_pair(x, d)
    return float(np.dot(d, np.abs(x)))


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def mahalanobis_norm(x, m) -> float:
    """sqrt(x^T M x) for symmetric PSD ``M``; negative round-off clamps to 0."""
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    if m.shape != (x.size, x.size):
        raise ValueError(f"dimension mismatch: x{x.shape} vs M{m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    q = float(x @ m @ x)
    return float(np.sqrt(max(q, 0.0)))


def cholesky_lower(m: np.ndarray, step: int | None = None) -> np.ndarray:
    """Lower Cholesky factor with the scale-relative singularity floor.

    The floor is checked on the squared pivots, which bound the smallest
    eigenvalue from above.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got {m.shape}")
    diag = np.diag(m)
    if m.shape[0] and not np.all(np.isfinite(diag)):
        raise CovarianceSingularError("non-finite covariance", step)
    floor = SPD_RELATIVE_FLOOR * float(np.max(diag, initial=0.0))
    c, info = lapack.dpotrf(m, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        raise CovarianceSingularError(step=step)
    pivots = np.diag(c)
    if pivots.size and (float(np.min(pivots)) ** 2 <= floor or floor <= 0.0):
        raise CovarianceSingularError(step=step)
    return c


def spd_inverse(m, step: int | None = None) -> np.ndarray:
    """Inverse of an SPD matrix via Cholesky, returned symmetrized.

    Raises
    ------
    CovarianceSingularError
        If the factorization fails or a pivot falls below the floor
        ``1e-12 * max(diag(m))``. ``step`` is attached to the error when given.
    """
    m = np.asarray(m, dtype=float)
    if m.shape == (0, 0):
        return m.copy()
    c = cholesky_lower(m, step)
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise CovarianceSingularError(step=step)
    # dpotri fills only the lower triangle
    inv = np.tril(inv) + np.tril(inv, -1).T
    return symmetrize(inv)
