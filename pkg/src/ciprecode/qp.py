"""Simplex-constrained quadratic program used by both CI regimes.

Problem
-------
    minimize    uᵀ Q u
    subject to  𝟙ᵀu = 1,   u_n ≥ 0 for n < N

with ``Q`` (M×M) symmetric positive semidefinite. The leading ``N``
variables are sign constrained, the trailing ``M - N`` are free.

Stationarity gives ``2Qu + q0·𝟙 − q = 0`` with ``q_n ≥ 0`` on the
constrained block and ``q_n = 0`` elsewhere; eliminating ``q0`` with the
sum constraint yields ``u = ½ G q + a / c`` where ``a = Q⁻¹𝟙``,
``c = 𝟙ᵀa`` and ``G`` holds the first ``N`` columns of ``Q⁻¹ − aaᵀ/c``.
Any ``q`` therefore produces a ``u`` that sums to one, which is what the
solvers below exploit.

Three solvers are provided:

* :func:`solve_active_set` – an active-set method over the multipliers
  ``q`` (exact mode) or, when ``Q`` is singular, a dual active-set method
  on the equivalent least-norm problem in the range of ``Q`` (pseudo
  mode).
* :func:`solve_closed_form_dual` – a single-constraint heuristic with no
  iterations.
* :func:`solve_oracle` – exhaustive enumeration of the ``2^N`` faces.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .numerics import SingularSystemError, pseudo_inverse, solve_symmetric, symmetric_inverse

EXACT = "exact"
PSEUDO = "pseudo"

ORACLE_MAX_N = 16


class QpError(RuntimeError):
    """Base class for solver failures."""


class DegenerateProblemError(QpError):
    """``c = 𝟙ᵀQ⁻¹𝟙`` vanishes or a pivot is zero to working precision."""


class SingularProblemError(QpError):
    """Exact mode was requested for a singular ``Q``."""


class IterationLimitError(QpError):
    """The active-set loop hit ``iter_max``.

    Attributes
    ----------
    solution : QpSolution
        Last iterate (sums to one but may violate ``u_n ≥ 0``).
    violation : float
        ``max(0, -min(u[:N]))`` of that iterate.
    """

    def __init__(self, solution: "QpSolution", violation: float):
        super().__init__(
            f"active-set iteration limit reached after {solution.iterations} iterations "
            f"(constraint violation {violation:.3e}, active set {list(solution.active)})"
        )
        self.solution = solution
        self.violation = violation


@dataclass(frozen=True)
class QpProblem:
    """Data of one QP instance.

    Attributes
    ----------
    Q : ndarray, shape (M, M)
        Symmetric positive (semi)definite matrix.
    N : int
        Number of leading sign-constrained variables, ``0 <= N <= M``.
    inverse_mode : {"exact", "pseudo"}
        ``"pseudo"`` for rank-deficient ``Q``.
    factor : ndarray, shape (M, r), optional
        A root ``L`` with ``Q = L Lᵀ``. Used by the pseudo-mode solver in
        place of an eigendecomposition when the caller already has one.
    """

    Q: np.ndarray
    N: int
    inverse_mode: str = EXACT
    factor: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        scale = max(1.0, float(np.abs(Q).max(initial=0.0)))
        if np.abs(Q - Q.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("Q is not symmetric")
        if not 0 <= self.N <= Q.shape[0]:
            raise ValueError(f"N={self.N} outside [0, {Q.shape[0]}]")
        if self.inverse_mode not in (EXACT, PSEUDO):
            raise ValueError(f"unknown inverse_mode {self.inverse_mode!r}")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))

    @property
    def M(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class QpWorkspace:
    """Quantities derived from ``Q`` that every solver path needs.

    ``Q_inv`` is ``Q⁻¹`` in exact mode and ``Q⁺`` in pseudo mode.
    """

    problem: QpProblem
    Q_inv: np.ndarray
    a: np.ndarray
    c: float
    Phi: np.ndarray
    G: np.ndarray

    @property
    def N(self) -> int:
        return self.problem.N

    @property
    def a_A(self) -> np.ndarray:
        return self.a[: self.N]

    @property
    def G_A(self) -> np.ndarray:
        return self.G[: self.N]

    def u_from_multipliers(self, q: np.ndarray) -> np.ndarray:
        """``u = ½ G q + a / c``."""
        return 0.5 * self.G @ q + self.a / self.c


@dataclass(frozen=True)
class QpSolution:
    """Result of a QP solve.

    Attributes
    ----------
    u : ndarray, shape (M,)
    active : tuple of int
        Constrained indices held at zero by the solver.
    iterations : int
    objective : float
        ``uᵀ Q u``.
    method : str
    """

    u: np.ndarray
    active: tuple
    iterations: int
    objective: float
    method: str

    @property
    def total(self) -> float:
        return float(self.u.sum())


def qp_setup(p: QpProblem) -> QpWorkspace:
    """Form ``a``, ``c``, ``Φ`` and ``G`` for ``p``.

    Raises
    ------
    SingularProblemError
        Exact mode with a singular ``Q``.
    DegenerateProblemError
        ``c`` is zero to working precision.
    """
    if p.inverse_mode == EXACT:
        try:
            Q_inv = symmetric_inverse(p.Q)
        except SingularSystemError as exc:
            raise SingularProblemError(
                f"Q is singular (condition {exc.condition:.3e}); use inverse_mode='pseudo'"
            ) from exc
    else:
        Q_inv = pseudo_inverse(p.Q)
        Q_inv = 0.5 * (Q_inv + Q_inv.T)
    a = Q_inv.sum(axis=1)
    c = float(a.sum())
    if not np.isfinite(c) or abs(c) <= 1e-12 * max(1.0, float(np.abs(a).sum())):
        raise DegenerateProblemError(f"c = 1ᵀQ⁻¹1 = {c:.3e} is zero to working precision")
    Phi = np.outer(a, a) / c
    G = (Q_inv - Phi)[:, : p.N]
    return QpWorkspace(problem=p, Q_inv=Q_inv, a=a, c=c, Phi=Phi, G=G)


def kkt_multipliers(Q: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Multipliers ``q`` implied by ``u`` through stationarity.

    With complementarity the sum multiplier is ``q0 = -2 uᵀQu``, so
    ``q = 2 (Q u - uᵀQu · 𝟙)``. Entries past ``N`` should vanish at an
    optimum and serve as residuals.
    """
    Qu = Q @ u
    return 2.0 * (Qu - float(u @ Qu))


def _objective(Q: np.ndarray, u: np.ndarray) -> float:
    return float(u @ Q @ u)


# ---------------------------------------------------------------------------
# active set, exact mode
# ---------------------------------------------------------------------------


def _multiplier_active_set(w: QpWorkspace, iter_max: int, tol: float) -> QpSolution:
    """Grow a set of tight constraints one at a time, backtracking as needed.

    The candidate constraint is the most negative ``u_n`` outside the
    active set (stable sort, lowest index first on ties). Its inclusion
    target ``q̃_T = -(2/c) Z_T⁻¹ a_T`` is approached along a straight line
    from the current multipliers; if an active multiplier would cross
    zero first, the step stops there and that index leaves the set
    before the target is recomputed.
    """
    p = w.problem
    N = p.N
    G_A, a = w.G_A, w.a
    u = w.u_from_multipliers(np.zeros(N))
    q = np.zeros(N)
    S: list[int] = []
    if N == 0 or u[:N].min() >= 0:
        return QpSolution(u, (), 0, _objective(p.Q, u), "active_set")

    it = 0
    while True:
        uA = u[:N]
        in_set = np.zeros(N, dtype=bool)
        in_set[S] = True
        order = np.argsort(uA, kind="stable")
        order = order[~in_set[order]]
        if order.size == 0 or uA[order[0]] >= -tol * max(1.0, np.abs(u).max()):
            break
        add = int(order[0])
        while True:
            if it >= iter_max:
                sol = QpSolution(u, tuple(S), it, _objective(p.Q, u), "active_set")
                raise IterationLimitError(sol, max(0.0, -float(uA.min())))
            it += 1
            T = S + [add]
            try:
                q_T = solve_symmetric(G_A[np.ix_(T, T)], -(2.0 / w.c) * a[T])
            except SingularSystemError as exc:
                raise DegenerateProblemError(
                    f"active block singular for set {T} (condition {exc.condition:.3e})"
                ) from exc
            target = np.zeros(N)
            target[T] = q_T
            blocking = [(q[j] / (q[j] - target[j]), j) for j in S if target[j] < 0]
            if not blocking or min(blocking)[0] >= 1.0:
                q, S = target, T
                break
            step, j = min(blocking)
            q = q + step * (target - q)
            q[j] = 0.0
            S.remove(j)
        u = w.u_from_multipliers(q)
    return QpSolution(u, tuple(sorted(S)), it, _objective(p.Q, u), "active_set")


# ---------------------------------------------------------------------------
# active set, pseudo mode
# ---------------------------------------------------------------------------


def _range_factor(Q: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """``L`` with ``Q ≈ L Lᵀ`` restricted to eigenvalues above ``tol·λ_max``."""
    lam, vec = np.linalg.eigh(Q)
    top = lam.max(initial=0.0)
    if top <= 0:
        return np.zeros((Q.shape[0], 0))
    keep = lam > tol * top
    return vec[:, keep] * np.sqrt(lam[keep])


def _dual_active_set(L: np.ndarray, N: int, iter_max: int, tol: float = 1e-10):
    """Solve the QP through its strictly convex primal.

    With ``Q = L Lᵀ`` the QP is (up to scaling) the Lagrangian dual of

        minimize ½‖y‖²  s.t.  L_A y ≥ 𝟙,  L_B y = 𝟙

    where ``A`` are the first ``N`` rows and ``B`` the rest. The
    multipliers ``λ`` of that problem give ``u = λ / 𝟙ᵀλ``, and the QP
    optimum equals ``1/‖y‖²``. The primal is solved with the
    Goldfarb-Idnani dual method, which starts from ``y = 0`` and adds
    violated constraints while keeping dual feasibility. When the
    constraints are inconsistent the method returns a direction ``λ``
    with ``Lᵀλ = 0``, which is an optimal ``u`` with objective zero.

    Returns
    -------
    u : ndarray
    active : list of int
        Working set (constraints tight in ``y``).
    iterations : int
    consistent : bool
        False when the least-norm problem is infeasible.
    """
    M = L.shape[0]
    y = np.zeros(L.shape[1])
    lam = np.zeros(M)
    act: list[int] = []
    it = 0

    def directions(n):
        if not act:
            return n.copy(), np.zeros(0)
        Na = L[act].T
        r, *_ = np.linalg.lstsq(Na, n, rcond=None)
        return n - Na @ r, r

    def certificate(p, r):
        d = np.zeros(M)
        d[p] = 1.0
        d[act] -= r
        return d / d.sum(), list(act), it, False

    for p in range(N, M):
        it += 1
        n = L[p]
        slack = float(n @ y) - 1.0
        z, r = directions(n)
        zz = float(z @ n)
        if zz <= 1e-12 * max(1e-300, float(n @ n)):
            if abs(slack) <= tol:
                continue
            return certificate(p, r)
        step = -slack / zz
        y = y + step * z
        if act:
            lam[act] -= step * r
        lam[p] += step
        act.append(p)

    while True:
        slack = L[:N] @ y - 1.0
        free = np.ones(N, dtype=bool)
        free[[j for j in act if j < N]] = False
        order = np.argsort(slack, kind="stable")
        order = order[free[order]]
        if order.size == 0 or slack[order[0]] >= -tol * max(1.0, float(np.abs(L @ y).max())):
            break
        p = int(order[0])
        while True:
            if it >= iter_max:
                u = lam / lam.sum() if lam.sum() > 0 else np.full(M, 1.0 / M)
                return u, list(act), it, None
            it += 1
            n = L[p]
            s_p = float(n @ y) - 1.0
            z, r = directions(n)
            zz = float(z @ n)
            t_dual, drop = np.inf, None
            for idx, j in enumerate(act):
                if j < N and r[idx] > 1e-14:
                    cand = lam[j] / r[idx]
                    if cand < t_dual:
                        t_dual, drop = cand, j
            t_primal = -s_p / zz if zz > 1e-12 * float(n @ n) else np.inf
            if np.isinf(t_dual) and np.isinf(t_primal):
                return certificate(p, r)
            step = min(t_dual, t_primal)
            if np.isfinite(t_primal):
                y = y + step * z
            if act:
                lam[act] -= step * r
            lam[p] += step
            if t_primal <= t_dual:
                act.append(p)
                break
            lam[drop] = 0.0
            act.remove(drop)
    return lam / lam.sum(), list(act), it, True


def solve_active_set(p: QpProblem, iter_max: int = 100, tol: float = 1e-12) -> QpSolution:
    """Solve the QP with the active-set method matching ``p.inverse_mode``.

    Exact mode starts from ``u = a/c`` and returns it with zero
    iterations when it is already feasible. Pseudo mode works on a range
    factor of ``Q`` (``p.factor`` if given).

    Raises
    ------
    IterationLimitError
        ``iter_max`` exhausted; the exception carries the last iterate.
    DegenerateProblemError
        Singular active block.
    """
    if p.inverse_mode == EXACT:
        return _multiplier_active_set(qp_setup(p), iter_max, tol)
    L = p.factor if p.factor is not None else _range_factor(p.Q)
    u, work, it, consistent = _dual_active_set(np.asarray(L, dtype=float), p.N, iter_max)
    zero_set = tuple(n for n in range(p.N) if n not in set(work))
    sol = QpSolution(u, zero_set, it, _objective(p.Q, u), "active_set")
    if consistent is None:
        raise IterationLimitError(sol, max(0.0, -float(u[: p.N].min(initial=0.0))))
    return sol


def solve_closed_form_dual(w: QpWorkspace) -> QpSolution:
    """Sub-optimal solution with at most one multiplier switched on.

    If ``d = min(a_A) ≥ 0`` the unconstrained start ``a/c`` is returned.
    Otherwise only the multiplier of ``k = argmin(a_A)`` is kept and
    chosen so that ``u_k = 0``:

        u = (e·a − d·g_k) / (c·e),   e = G[k, k]

    Raises
    ------
    DegenerateProblemError
        ``e`` is zero to working precision.
    """
    p = w.problem
    if p.N == 0 or w.a_A.min() >= 0:
        u = w.a / w.c
        return QpSolution(u, (), 0, _objective(p.Q, u), "closed_form")
    k = int(np.argmin(w.a_A))
    d = float(w.a[k])
    e = float(w.G[k, k])
    if abs(e) <= 1e-14 * max(1.0, float(np.abs(w.G).max())):
        raise DegenerateProblemError(f"pivot G[{k},{k}] = {e:.3e} is zero to working precision")
    u = (e * w.a - d * w.G[:, k]) / (w.c * e)
    return QpSolution(u, (k,), 0, _objective(p.Q, u), "closed_form")


def solve_oracle(p: QpProblem, tol: float = 1e-10) -> QpSolution:
    """Exhaustive solve over every subset of tight sign constraints.

    For each subset ``S`` the equality-constrained problem on the
    remaining coordinates is solved through its bordered KKT system with
    a pseudo-inverse; inconsistent systems are discarded by residual.
    Among candidates with ``u_n ≥ -tol`` (and, in exact mode where the
    multipliers are unique, ``q_S ≥ -tol``) the smallest objective wins.
    Subsets of equal size are solved as one batch.
    """
    N, M, Q = p.N, p.M, p.Q
    if N > ORACLE_MAX_N:
        raise ValueError(f"oracle enumeration limited to N <= {ORACLE_MAX_N}, got N={N}")
    qscale = max(1.0, float(np.abs(Q).max(initial=0.0)))
    best_obj, best_u, best_S = np.inf, None, None
    for size in range(N + 1):
        subsets = list(itertools.combinations(range(N), size))
        if size == M:
            continue
        free = np.array([[n for n in range(M) if n not in s] for s in subsets], dtype=np.int64)
        f = free.shape[1]
        K = np.zeros((len(subsets), f + 1, f + 1))
        K[:, :f, :f] = 2.0 * Q[free[:, :, None], free[:, None, :]]
        K[:, :f, f] = 1.0
        K[:, f, :f] = 1.0
        rhs = np.zeros(f + 1)
        rhs[f] = 1.0
        sol = np.linalg.pinv(K, rcond=1e-12) @ rhs
        resid = np.abs(K @ sol[..., None] - rhs[:, None])[..., 0].max(axis=1)
        ok = resid <= 1e-8 * qscale * (1.0 + np.abs(sol).max(axis=1))
        for b in np.flatnonzero(ok):
            u = np.zeros(M)
            u[free[b]] = sol[b, :f]
            scale = max(1.0, float(np.abs(u).max()))
            if N and u[:N].min() < -tol * scale:
                continue
            if p.inverse_mode == EXACT and size:
                q = kkt_multipliers(Q, u)
                qs = max(1.0, float(np.abs(2.0 * Q @ u).max()))
                if q[list(subsets[b])].min() < -tol * qs:
                    continue
            obj = _objective(Q, u)
            if obj < best_obj:
                best_obj, best_u, best_S = obj, u, subsets[b]
    if best_u is None:
        raise QpError("oracle found no feasible face; problem data is invalid")
    return QpSolution(best_u, tuple(best_S), 0, best_obj, "oracle")
