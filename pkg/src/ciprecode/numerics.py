"""Dense linear-algebra kernels shared by the precoding modules.

Everything here is a thin, explicitly-toleranced layer over LAPACK (via
numpy/scipy) so that callers never pick singular-value thresholds or
conditioning limits ad hoc.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla

#: Singular values at or below ``RANK_TOL * sigma_max`` count as zero.
RANK_TOL = 1e-9

#: Condition estimates above this are rejected by the precoders.
COND_LIMIT = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    """A linear system is singular to working precision.

    Attributes
    ----------
    condition : float
        Estimated 2-norm condition number of the offending matrix
        (``inf`` when exactly singular).
    """

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = float(condition)


def condition_estimate(A: np.ndarray) -> float:
    """2-norm condition number from the singular values, ``inf`` if singular."""
    sv = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    if sv.size == 0 or sv[-1] == 0.0:
        return float("inf")
    return float(sv[0] / sv[-1])


def check_conditioning(A: np.ndarray, what: str, limit: float = COND_LIMIT) -> float:
    """Raise :class:`SingularSystemError` if ``cond(A) > limit``.

    Returns the estimate so callers can log it.
    """
    cond = condition_estimate(A)
    if not np.isfinite(cond) or cond > limit:
        raise SingularSystemError(f"{what} is ill-conditioned", cond)
    return cond


def solve_symmetric(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for real symmetric ``A``.

    Uses a Bunch-Kaufman LDLᵀ factorization (``scipy.linalg.solve`` with
    ``assume_a='sym'``), which pivots for stability on indefinite input.
    ``b`` may be a vector or a matrix of right-hand sides.

    Raises
    ------
    SingularSystemError
        If the factorization breaks down or LAPACK's reciprocal condition
        estimate falls below machine epsilon.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b is {b.shape}")
    if A.shape[0] == 0:
        return np.zeros_like(b)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            return sla.solve(A, b, assume_a="sym")
    except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
        raise SingularSystemError("singular system", condition_estimate(A)) from exc


def symmetric_inverse(A: np.ndarray) -> np.ndarray:
    """Inverse of a real symmetric matrix, symmetrized on output."""
    inv = solve_symmetric(A, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def hermitian_inverse(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Inverse of a Hermitian positive-definite matrix via Cholesky.

    Raises :class:`SingularSystemError` when the condition number exceeds
    :data:`COND_LIMIT` or the factorization fails.
    """
    check_conditioning(A, what)
    try:
        c, low = sla.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"{what} is not positive definite", condition_estimate(A)) from exc
    inv = sla.cho_solve((c, low), np.eye(A.shape[0], dtype=A.dtype))
    return 0.5 * (inv + inv.conj().T)


def pseudo_inverse(A: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with a relative singular-value cutoff.

    Singular values ``<= tol * sigma_max`` are treated as zero; the zero
    matrix maps to the zero matrix of transposed shape.
    """
    A = np.asarray(A)
    u, sv, vh = np.linalg.svd(A, full_matrices=False)
    if sv.size == 0 or sv[0] == 0.0:
        return np.zeros(A.shape[::-1], dtype=A.dtype)
    keep = sv > tol * sv[0]
    return (vh[keep].conj().T / sv[keep]) @ u[:, keep].conj().T


def numeric_rank(A: np.ndarray, tol: float = RANK_TOL) -> int:
    """Number of singular values strictly above ``tol * sigma_max``."""
    sv = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol * sv[0]))


def svd_null_basis(A: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the numerical null space of real ``A``.

    Parameters
    ----------
    A : ndarray, shape (m, n)
    tol : float
        Relative cutoff; right singular vectors whose singular value is
        ``<= tol * sigma_max`` are returned (rows beyond ``m`` count as
        zero singular values).

    Returns
    -------
    ndarray, shape (n, n - rank)
        Columns span the null space. Full-rank square input gives an
        ``(n, 0)`` array.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        raise ValueError("A must be non-empty")
    _, sv, vh = np.linalg.svd(A, full_matrices=True)
    rank = numeric_rank(A, tol) if sv[0] > 0 else 0
    return vh[rank:].T.copy()
