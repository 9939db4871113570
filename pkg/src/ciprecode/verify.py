"""Certificate suites: KKT residuals, oracle agreement, ZF reduction, rank law.

Each suite draws its own channels and symbols from the seeded substreams
in :mod:`ciprecode.sim` and reports the worst residual per check together
with the number of instances that broke a tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .baselines import zf_precode
from .ci_core import build_geometry, solve_ci
from .ci_overload import consistency_matrix, solve_ci_overload
from .modem import build_expansion, make_square_qam, map_bits
from .numerics import numeric_rank, symmetric_inverse
from .sim import STREAM_BITS, STREAM_CHANNEL, draw_channel, substream

# Tolerances of the per-slot KKT certificate.
KKT_TOL = {
    "channel": 1e-8,     # max |HWs - U diag(Ω) s_E|
    "power": 1e-8,       # relative |‖Ws‖² - p0|
    "inner": 1e-8,       # spread of inner scalings
    "outer": 1e-9,       # max(0, t - min outer scaling)
    "sum": 1e-10,        # |𝟙ᵀu - 1|
    "slackness": 1e-8,   # max u_n q_n over constrained components
}

ORACLE_RTOL = 1e-8
ZF_COSINE_TOL = 1e-10

_VERIFY_STREAM = 7


@dataclass
class SuiteReport:
    """Outcome of one suite at one configuration."""

    name: str
    K: int
    Nt: int
    order: int
    instances: int = 0
    violations: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def record(self, key: str, value: float, tol: float) -> None:
        self.worst[key] = max(self.worst.get(key, 0.0), float(value))
        self.violations.setdefault(key, 0)
        if not value <= tol:
            self.violations[key] += 1

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())

    @property
    def passed(self) -> bool:
        return self.total_violations == 0


def _instance(seed: int, K: int, Nt: int, order: int, index: int):
    c = make_square_qam(order)
    H = draw_channel(K, Nt, substream(seed, _VERIFY_STREAM, STREAM_CHANNEL, K, Nt, order, index))
    bits = substream(seed, _VERIFY_STREAM, STREAM_BITS, K, Nt, order, index).integers(
        0, 2, K * c.bits_per_symbol, dtype=np.int8)
    return H, build_expansion(map_bits(bits, c), c)


def kkt_residuals(H, frame, omega, t, u, Q, x, p0: float = 1.0) -> dict:
    """Residual of every KKT certificate check for one slot.

    ``u`` and ``Q`` live in the outer-first order; the constrained block is
    the first ``frame.n_outer`` entries.
    """
    target = frame.U @ (omega * frame.s_E)
    inner = omega[~frame.mask]
    outer = omega[frame.mask]
    N = frame.n_outer
    q = qp.kkt_multipliers(Q, u)
    qscale = max(1.0, float(np.abs(2 * Q @ u).max()))
    return {
        "channel": float(np.abs(H @ x - target).max()),
        "power": abs(float(np.vdot(x, x).real) - p0) / p0,
        "inner": float(inner.max() - inner.min()) if inner.size else 0.0,
        "outer": max(0.0, t - float(outer.min())) if outer.size else 0.0,
        "sum": abs(float(u.sum()) - 1.0),
        "slackness": float(np.max(np.abs(u[:N] * q[:N]), initial=0.0)) / qscale,
    }


def run_kkt_suite(K: int, order: int, trials: int, seed: int = 0, p0: float = 1.0,
                  Nt: int | None = None) -> SuiteReport:
    """KKT certificate of the active-set CI solution on ``trials`` slots (``K ≤ Nt``)."""
    Nt = K if Nt is None else Nt
    rep = SuiteReport("kkt", K, Nt, order)
    start = time.perf_counter()
    for i in range(trials):
        H, frame = _instance(seed, K, Nt, order, i)
        sol, pre = solve_ci(H, frame, p0)
        geo = build_geometry(H, frame)
        Q = symmetric_inverse(geo.V_tilde)
        res = kkt_residuals(H, frame, sol.omega, sol.t, sol.u, Q, pre.W @ frame.s, p0)
        for key, val in res.items():
            rep.record(key, val, KKT_TOL[key])
        rep.instances += 1
    rep.seconds = time.perf_counter() - start
    return rep


def _relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def run_oracle_suite(K: int, Nt: int, order: int, trials: int, seed: int = 0,
                     p0: float = 1.0) -> SuiteReport:
    """Compare the active-set scale ``t`` with the enumeration oracle's.

    In the overloaded regime a slot whose QP optimum is zero has no
    scaling vector at all; both solvers must agree on that, and such
    slots are counted in ``extra['empty']``.
    """
    rep = SuiteReport("oracle", K, Nt, order)
    rep.extra["empty"] = 0
    start = time.perf_counter()
    for i in range(trials):
        H, frame = _instance(seed, K, Nt, order, i)
        if K <= Nt:
            a, _ = solve_ci(H, frame, p0, solver="active_set")
            b, _ = solve_ci(H, frame, p0, solver="oracle")
            gap = _relative_gap(a.t, b.t)
        else:
            a, pa = solve_ci_overload(H, frame, p0, solver="active_set")
            b, pb = solve_ci_overload(H, frame, p0, solver="oracle")
            if pa is None and pb is None:
                rep.extra["empty"] += 1
                gap = 0.0
            elif pa is None or pb is None:
                gap = np.inf
            else:
                gap = _relative_gap(a.t, b.t)
        rep.record("t", gap, ORACLE_RTOL)
        rep.instances += 1
    rep.seconds = time.perf_counter() - start
    return rep


def cosine_distance(x: np.ndarray, y: np.ndarray) -> float:
    """``1 - |xᴴy| / (‖x‖‖y‖)``."""
    return 1.0 - abs(np.vdot(x, y)) / (np.linalg.norm(x) * np.linalg.norm(y))


def run_zf_reduction(K: int, order: int, trials: int, seed: int = 0, p0: float = 1.0) -> SuiteReport:
    """On slots where ``min(a_A) ≥ 0`` the CI and ZF transmit vectors coincide.

    ``extra['eligible']`` counts those slots.
    """
    rep = SuiteReport("zf_reduction", K, K, order)
    rep.extra["eligible"] = 0
    start = time.perf_counter()
    for i in range(trials):
        H, frame = _instance(seed, K, K, order, i)
        geo = build_geometry(H, frame)
        a = geo.V_tilde.sum(axis=1)
        rep.instances += 1
        if frame.n_outer and a[: frame.n_outer].min() < 0:
            continue
        rep.extra["eligible"] += 1
        sol, pre = solve_ci(H, frame, p0)
        rep.record("cosine", cosine_distance(pre.x, zf_precode(H, frame.s, p0).x), ZF_COSINE_TOL)
        rep.record("iterations", sol.iterations, 0)
    rep.seconds = time.perf_counter() - start
    return rep


def run_rank_law(K: int, Nt: int, trials: int, seed: int = 0, order: int = 16) -> SuiteReport:
    """``rank(P_E) = 2(K - Nt)`` on ``trials`` channels."""
    rep = SuiteReport("rank_law", K, Nt, order)
    start = time.perf_counter()
    for i in range(trials):
        H, frame = _instance(seed, K, Nt, order, i)
        _, P_E, _ = consistency_matrix(H, frame)
        rep.record("rank_error", abs(numeric_rank(P_E) - 2 * (K - Nt)), 0)
        rep.instances += 1
    rep.seconds = time.perf_counter() - start
    return rep
