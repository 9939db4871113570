"""Constructive-interference precoding for more users than antennas.

With ``K > Nt`` the target ``U diag(Ω) s_E`` is only reachable when it
lies in the range of ``HHᴴ``. Writing that consistency condition as
``P_E Ω = 0`` (real and imaginary parts stacked) restricts ``Ω = D β``
to the null space of ``P_E``, whose dimension is ``2 Nt`` for generic
channels. The scaling problem then becomes the same simplex QP, now with
a rank-deficient ``Q``, and a slot supports all ``K`` streams only when
the resulting scalings are all positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import qp
from .baselines import Precoder
from .ci_core import SOLVERS, outer_first_permutation
from .modem import SymbolFrame
from .numerics import (RANK_TOL, SingularSystemError, check_conditioning, pseudo_inverse,
                       svd_null_basis)

#: Relative tolerance on equality of the inner scalings.
INNER_EQUALITY_RTOL = 1e-6


class RankAnomalyError(SingularSystemError):
    """The consistency matrix does not have the generic rank."""


@dataclass(frozen=True)
class OverloadGeometry:
    """Per-slot matrices of the ``K > Nt`` problem.

    Attributes
    ----------
    P : complex ndarray, shape (K, 2K)
        ``(HHᴴ(HHᴴ)⁺ − I) U diag(s_E)``.
    P_E : ndarray, shape (2K, 2K)
        ``[Re P; Im P]``.
    D : ndarray, shape (2K, 2Nt)
        Orthonormal null-space basis of ``P_E``.
    X : complex ndarray, shape (2Nt, 2Nt)
    Y : ndarray
        ``Re X``; ``βᵀYβ`` is the transmit power of ``Ω = Dβ``.
    F : ndarray
        Outer-first permutation.
    gram_pinv : complex ndarray, shape (K, K)
        ``(HHᴴ)⁺``.
    frame : SymbolFrame
    """

    P: np.ndarray
    P_E: np.ndarray
    D: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    F: np.ndarray
    gram_pinv: np.ndarray
    frame: SymbolFrame


@dataclass(frozen=True)
class OverloadSolution:
    """Scalings for one overloaded slot.

    Attributes
    ----------
    beta : ndarray, shape (2Nt,)
        Null-space weights.
    omega : ndarray, shape (2K,)
        ``D β``.
    t : float
        ``min(Ω)``; non-positive when the slot cannot carry all streams.
    feasible : bool
    u : ndarray
        Dual vector (outer-first order).
    delta0 : float
        Power multiplier; zero when the QP optimum is zero.
    iterations : int
    objective : float
    """

    beta: np.ndarray
    omega: np.ndarray
    t: float
    feasible: bool
    u: np.ndarray
    delta0: float
    iterations: int
    objective: float


def consistency_matrix(H: np.ndarray, frame: SymbolFrame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``P``, its real stack ``P_E`` and ``(HHᴴ)⁺``.

    ``P Ω = 0`` exactly when ``U diag(Ω) s_E`` lies in the range of ``HHᴴ``.
    """
    H = np.asarray(H, dtype=complex)
    gram = H @ H.conj().T
    gram_pinv = pseudo_inverse(gram)
    gram_pinv = 0.5 * (gram_pinv + gram_pinv.conj().T)
    P = (gram @ gram_pinv - np.eye(H.shape[0])) @ frame.B
    return P, np.vstack([P.real, P.imag]), gram_pinv


def build_overload_geometry(H: np.ndarray, frame: SymbolFrame) -> OverloadGeometry:
    """Form ``P``, ``P_E``, ``D``, ``X`` and ``Y`` for channel ``H`` (K×Nt).

    Raises
    ------
    ValueError
        ``K ≤ Nt``.
    RankAnomalyError
        The null space of ``P_E`` is not ``2 Nt`` dimensional.
    """
    H = np.asarray(H, dtype=complex)
    K, Nt = H.shape
    if K != frame.K:
        raise ValueError(f"channel has {K} users but frame has {frame.K} symbols")
    if K <= Nt:
        raise ValueError(f"K={K} <= Nt={Nt}: use the conventional precoder")
    P, P_E, gram_pinv = consistency_matrix(H, frame)
    B = frame.B
    D = svd_null_basis(P_E, RANK_TOL)
    if D.shape[1] != 2 * Nt:
        raise RankAnomalyError(
            f"null space of the consistency matrix has dimension {D.shape[1]}, expected {2 * Nt}",
            float("inf"),
        )
    BD = B @ D
    X = BD.conj().T @ gram_pinv @ BD
    Y = X.real
    Y = 0.5 * (Y + Y.T)
    return OverloadGeometry(P=P, P_E=P_E, D=D, X=X, Y=Y, F=outer_first_permutation(frame.mask),
                            gram_pinv=gram_pinv, frame=frame)


def check_feasibility(omega: np.ndarray, frame: SymbolFrame) -> bool:
    """True iff every scaling is positive and the inner ones coincide."""
    omega = np.asarray(omega, dtype=float)
    if omega.size != 2 * frame.K or not np.all(np.isfinite(omega)):
        return False
    if omega.min() <= 0:
        return False
    inner = omega[~frame.mask]
    if inner.size > 1 and inner.max() - inner.min() > INNER_EQUALITY_RTOL * abs(inner).max():
        return False
    return True


def overload_precoder(H: np.ndarray, frame: SymbolFrame, omega: np.ndarray, gram_pinv: np.ndarray,
                      label: str = "CI") -> Precoder:
    """``W = (1/K) Hᴴ(HHᴴ)⁺ U diag(Ω) s_E ŝᵀ`` with receiver scale ``min(Ω)``."""
    target = frame.U @ (omega * frame.s_E)
    x = np.asarray(H, dtype=complex).conj().T @ (gram_pinv @ target)
    W = np.outer(x, frame.s_hat) / frame.K
    return Precoder(W=W, x=W @ frame.s, rx_scale=float(omega.min()), label=label)


def solve_ci_overload(H: np.ndarray, frame: SymbolFrame, p0: float = 1.0, solver: str = "active_set",
                      iter_max: int = 100) -> tuple[OverloadSolution, Precoder | None]:
    """CI scalings and precoder for one overloaded slot.

    Returns
    -------
    solution : OverloadSolution
    precoder : Precoder or None
        ``None`` when the QP optimum is zero, in which case no scaling
        vector with positive power exists. A precoder is returned for
        every other slot, feasible or not; callers check
        ``solution.feasible``.

    Raises
    ------
    SingularSystemError
        ``Y`` ill-conditioned, or a rank anomaly in the consistency matrix.
    """
    if p0 <= 0:
        raise ValueError("p0 must be positive")
    geo = build_overload_geometry(H, frame)
    check_conditioning(geo.Y, "null-space Gram matrix")
    # Y = RᵀR, so F D Y⁻¹ Dᵀ Fᵀ = L Lᵀ with L = F D R⁻¹.
    R = sla.cholesky(geo.Y, lower=False)
    FD = geo.F @ geo.D
    L = sla.solve_triangular(R, FD.T, trans="T", lower=False).T
    Q = L @ L.T
    problem = qp.QpProblem(Q, frame.n_outer, qp.PSEUDO, factor=L)
    if solver == "active_set":
        sol = qp.solve_active_set(problem, iter_max=iter_max)
    elif solver == "closed_form":
        sol = qp.solve_closed_form_dual(qp.qp_setup(problem))
    elif solver == "oracle":
        sol = qp.solve_oracle(problem)
    else:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    u = sol.u
    obj = float(u @ Q @ u)
    scale = max(1.0, float(np.abs(Q).max()))
    if obj <= 1e-12 * scale:
        zeros = np.zeros(2 * H.shape[1])
        empty = OverloadSolution(beta=zeros, omega=np.zeros(2 * frame.K), t=0.0, feasible=False, u=u,
                                 delta0=0.0, iterations=sol.iterations, objective=obj)
        return empty, None
    delta0 = float(np.sqrt(obj / (4.0 * p0)))
    beta = sla.cho_solve((R, False), FD.T @ u) / (2.0 * delta0)
    omega = geo.D @ beta
    precoder = overload_precoder(H, frame, omega, geo.gram_pinv,
                                 label="CI-CF" if solver == "closed_form" else "CI")
    solution = OverloadSolution(beta=beta, omega=omega, t=float(omega.min()),
                                feasible=check_feasibility(omega, frame), u=u, delta0=delta0,
                                iterations=sol.iterations, objective=obj)
    return solution, precoder
