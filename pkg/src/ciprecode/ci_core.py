"""Constructive-interference precoding when users do not exceed antennas.

For ``K ≤ Nt`` every received symbol can be set exactly:
``H x = U diag(Ω) s_E`` has the minimum-norm solution
``x = Hᴴ(HHᴴ)⁻¹ U diag(Ω) s_E``. Maximising the common inner scale ``t``
over the per-component scalings ``Ω`` under ``‖x‖² ≤ p0`` reduces to the
simplex QP of :mod:`ciprecode.qp` with ``Q = Ṽ⁻¹``, where ``V`` is the
real Gram matrix of the components and ``Ṽ`` its outer-first reordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qp
from .baselines import Precoder
from .modem import SymbolFrame
from .numerics import check_conditioning, hermitian_inverse, symmetric_inverse

SOLVERS = ("active_set", "closed_form", "oracle")


def outer_first_permutation(mask: np.ndarray) -> np.ndarray:
    """Permutation matrix moving outer components ahead of inner ones.

    Both groups keep their original relative order. Row ``m`` of the
    result selects original component ``order[m]``.
    """
    mask = np.asarray(mask, dtype=bool)
    order = np.concatenate([np.flatnonzero(mask), np.flatnonzero(~mask)])
    F = np.zeros((mask.size, mask.size))
    F[np.arange(mask.size), order] = 1.0
    return F


@dataclass(frozen=True)
class CiGeometry:
    """Per-slot matrices of the ``K ≤ Nt`` problem.

    Attributes
    ----------
    T : complex ndarray, shape (2K, 2K)
        ``diag(s_Eᴴ) Uᴴ (HHᴴ)⁻¹ U diag(s_E)``.
    V : ndarray
        ``Re T``; ``ΩᵀVΩ`` is the transmit power for scalings ``Ω``.
    F : ndarray
        Outer-first permutation.
    V_tilde : ndarray
        ``F V Fᵀ``.
    gram_inv : complex ndarray, shape (K, K)
        ``(HHᴴ)⁻¹``.
    frame : SymbolFrame
    """

    T: np.ndarray
    V: np.ndarray
    F: np.ndarray
    V_tilde: np.ndarray
    gram_inv: np.ndarray
    frame: SymbolFrame


@dataclass(frozen=True)
class ScalingSolution:
    """Optimal component scalings for one slot.

    Attributes
    ----------
    omega : ndarray, shape (2K,)
        Scalings in the original interleaved order.
    t : float
        Common inner scale (smallest scaling when every component is outer).
    u : ndarray
        Dual vector in the reordered (outer-first) space.
    delta0 : float
        Power-constraint multiplier.
    iterations : int
    objective : float
        ``uᵀQu`` of the QP.
    """

    omega: np.ndarray
    t: float
    u: np.ndarray
    delta0: float
    iterations: int
    objective: float


def _check_regime(H: np.ndarray, frame: SymbolFrame) -> None:
    K, Nt = H.shape
    if K != frame.K:
        raise ValueError(f"channel has {K} users but frame has {frame.K} symbols")
    if K > Nt:
        raise ValueError(f"K={K} > Nt={Nt}: use the overloaded precoder")


def build_geometry(H: np.ndarray, frame: SymbolFrame) -> CiGeometry:
    """Form ``T``, ``V``, ``F`` and ``Ṽ`` for channel ``H`` (K×Nt).

    Raises
    ------
    SingularSystemError
        ``HHᴴ`` ill-conditioned beyond the rejection threshold.
    """
    H = np.asarray(H, dtype=complex)
    _check_regime(H, frame)
    gram_inv = hermitian_inverse(H @ H.conj().T, "HHᴴ")
    B = frame.B
    T = B.conj().T @ gram_inv @ B
    V = T.real
    V = 0.5 * (V + V.T)
    F = outer_first_permutation(frame.mask)
    return CiGeometry(T=T, V=V, F=F, V_tilde=F @ V @ F.T, gram_inv=gram_inv, frame=frame)


def inner_scale(omega: np.ndarray, mask: np.ndarray) -> float:
    """Smallest inner scaling, or smallest overall if there are no inner components."""
    inner = omega[~mask]
    return float(inner.min() if inner.size else omega.min())


def reconstruct_precoder(H: np.ndarray, frame: SymbolFrame, omega: np.ndarray, p0: float = 1.0,
                         gram_inv: np.ndarray | None = None, label: str = "CI") -> Precoder:
    """Precoder realising the received symbols ``U diag(Ω) s_E``.

    ``W = (1/K) Hᴴ(HHᴴ)⁻¹ U diag(Ω) s_E ŝᵀ``, so ``Ws`` equals the
    minimum-norm transmit vector. The receiver scale is the inner scale of
    ``Ω``. ``p0`` is not used to rescale; callers pass a power-normalised
    ``Ω``.
    """
    H = np.asarray(H, dtype=complex)
    _check_regime(H, frame)
    if gram_inv is None:
        gram_inv = hermitian_inverse(H @ H.conj().T, "HHᴴ")
    omega = np.asarray(omega, dtype=float)
    target = frame.U @ (omega * frame.s_E)
    x = H.conj().T @ (gram_inv @ target)
    W = np.outer(x, frame.s_hat) / frame.K
    return Precoder(W=W, x=W @ frame.s, rx_scale=inner_scale(omega, frame.mask), label=label)


def _solve_qp(problem: qp.QpProblem, solver: str, iter_max: int) -> qp.QpSolution:
    if solver == "active_set":
        return qp.solve_active_set(problem, iter_max=iter_max)
    if solver == "closed_form":
        return qp.solve_closed_form_dual(qp.qp_setup(problem))
    if solver == "oracle":
        return qp.solve_oracle(problem)
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


def solve_ci(H: np.ndarray, frame: SymbolFrame, p0: float = 1.0, solver: str = "active_set",
             iter_max: int = 100) -> tuple[ScalingSolution, Precoder]:
    """Optimal CI scalings and precoder for one slot with ``K ≤ Nt``.

    Parameters
    ----------
    H : complex ndarray, shape (K, Nt)
    frame : SymbolFrame
    p0 : float
        Total transmit power.
    solver : {"active_set", "closed_form", "oracle"}
    iter_max : int
        Active-set iteration cap.

    Raises
    ------
    SingularSystemError
        ``HHᴴ`` or ``Ṽ`` ill-conditioned.
    QpError
        Propagated from the QP solver.
    """
    if p0 <= 0:
        raise ValueError("p0 must be positive")
    geo = build_geometry(H, frame)
    check_conditioning(geo.V_tilde, "reordered component Gram matrix")
    Q = symmetric_inverse(geo.V_tilde)
    problem = qp.QpProblem(Q, frame.n_outer, qp.EXACT)
    sol = _solve_qp(problem, solver, iter_max)
    u = sol.u
    obj = float(u @ Q @ u)
    if obj <= 0:
        raise qp.DegenerateProblemError(f"non-positive QP objective {obj:.3e}")
    delta0 = float(np.sqrt(obj / (4.0 * p0)))
    omega = geo.F.T @ (Q @ u) / (2.0 * delta0)
    precoder = reconstruct_precoder(H, frame, omega, p0, gram_inv=geo.gram_inv,
                                    label="CI-CF" if solver == "closed_form" else "CI")
    scaling = ScalingSolution(omega=omega, t=inner_scale(omega, frame.mask), u=u, delta0=delta0,
                              iterations=sol.iterations, objective=obj)
    return scaling, precoder
