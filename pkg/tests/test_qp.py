"""Tests for the simplex-constrained QP solvers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciprecode import qp
from ciprecode.ci_core import build_geometry
from ciprecode.ci_overload import solve_ci_overload
from ciprecode.numerics import symmetric_inverse
from conftest import random_slot


def ci_problem(rng, K, order=16):
    """QP instance arising from a random K = Nt slot."""
    H, frame = random_slot(rng, K, K, order)
    geo = build_geometry(H, frame)
    return qp.QpProblem(symmetric_inverse(geo.V_tilde), frame.n_outer)


def random_spd(rng, M, cond=50.0):
    V, _ = np.linalg.qr(rng.standard_normal((M, M)))
    lam = np.geomspace(1.0, cond, M)
    return (V * lam) @ V.T


def cvx_objective(Q, N):
    cp = pytest.importorskip("cvxpy")
    u = cp.Variable(Q.shape[0])
    expr = cp.quad_form(u, cp.psd_wrap(0.5 * (Q + Q.T)))
    cons = [cp.sum(u) == 1]
    if N:
        cons.append(u[:N] >= 0)
    cp.Problem(cp.Minimize(expr), cons).solve(solver=cp.CLARABEL)
    return float(u.value @ Q @ u.value)


class TestSetup:
    def test_identity(self):
        w = qp.qp_setup(qp.QpProblem(np.eye(4), 4))
        np.testing.assert_allclose(w.a, np.ones(4))
        assert w.c == pytest.approx(4.0)
        np.testing.assert_allclose(w.Phi, np.ones((4, 4)) / 4)

    def test_diagonal(self):
        w = qp.qp_setup(qp.QpProblem(np.diag([1.0, 2.0]), 2))
        np.testing.assert_allclose(w.a, [1.0, 0.5])
        assert w.c == pytest.approx(1.5)

    def test_phi_symmetric(self, rng):
        w = qp.qp_setup(ci_problem(rng, 4))
        np.testing.assert_allclose(w.Phi, w.Phi.T, atol=1e-12)
        np.testing.assert_allclose(w.G.sum(axis=0), 0.0, atol=1e-10 * np.abs(w.G).max())

    def test_zero_c(self):
        with pytest.raises(qp.DegenerateProblemError):
            qp.qp_setup(qp.QpProblem(np.diag([1.0, -1.0]), 2))

    def test_singular_exact_directs_to_pseudo(self):
        with pytest.raises(qp.SingularProblemError, match="pseudo"):
            qp.qp_setup(qp.QpProblem(np.ones((2, 2)), 2))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError, match="symmetric"):
            qp.QpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)
        with pytest.raises(ValueError):
            qp.QpProblem(np.eye(2), 3)
        with pytest.raises(ValueError):
            qp.QpProblem(np.eye(2), 1, "inverse")


class TestActiveSet:
    def test_symmetric_start(self):
        sol = qp.solve_active_set(qp.QpProblem(np.eye(2), 2))
        np.testing.assert_allclose(sol.u, [0.5, 0.5])
        assert sol.iterations == 0

    def test_weighted_simplex(self):
        # minimise u1² + 100 u2² on the simplex: stationarity gives u1 = 100 u2
        sol = qp.solve_active_set(qp.QpProblem(np.diag([1.0, 100.0]), 2))
        np.testing.assert_allclose(sol.u, [100 / 101, 1 / 101], atol=1e-14)

    def test_tight_constraint(self):
        # a = Q⁻¹1 has a negative second entry, so u_2 = 0 at the optimum
        Q = np.array([[1.0, 1.2, 0.0], [1.2, 2.0, 0.0], [0.0, 0.0, 1.0]])
        w = qp.qp_setup(qp.QpProblem(Q, 3))
        np.testing.assert_allclose(w.a, [10 / 7, -5 / 14, 1.0])
        sol = qp.solve_active_set(qp.QpProblem(Q, 3))
        np.testing.assert_allclose(sol.u, [0.5, 0.0, 0.5], atol=1e-14)
        assert sol.iterations == 1

    def test_zf_shortcut(self, rng):
        for _ in range(50):
            p = ci_problem(rng, 3)
            w = qp.qp_setup(p)
            if w.a_A.size == 0 or w.a_A.min() >= 0:
                sol = qp.solve_active_set(p)
                assert sol.iterations == 0
                np.testing.assert_allclose(sol.u, w.a / w.c, atol=1e-12)

    def test_no_constrained_variables(self, rng):
        p = qp.QpProblem(random_spd(rng, 4), 0)
        w = qp.qp_setup(p)
        sol = qp.solve_active_set(p)
        np.testing.assert_allclose(sol.u, w.a / w.c)
        assert sol.iterations == 0

    @pytest.mark.parametrize("K", [2, 3, 4])
    def test_matches_oracle(self, rng, K):
        for _ in range(70):
            p = ci_problem(rng, K)
            a, o = qp.solve_active_set(p), qp.solve_oracle(p)
            assert a.objective == pytest.approx(o.objective, rel=1e-8)
            assert abs(a.u.sum() - 1) <= 1e-10
            assert a.u[: p.N].min(initial=0) >= -1e-9

    def test_complementary_slackness(self, rng):
        for _ in range(50):
            p = ci_problem(rng, 4)
            for sol in (qp.solve_active_set(p), qp.solve_oracle(p)):
                q = qp.kkt_multipliers(p.Q, sol.u)
                scale = max(1.0, np.abs(2 * p.Q @ sol.u).max())
                assert np.all(np.abs(sol.u[: p.N] * q[: p.N]) <= 1e-8 * scale)
                assert q[: p.N].min(initial=0) >= -1e-8 * scale
                assert np.abs(q[p.N:]).max(initial=0) <= 1e-8 * scale

    def test_matches_cvxpy(self, rng):
        for _ in range(10):
            p = ci_problem(rng, 4, order=64)
            assert qp.solve_active_set(p).objective == pytest.approx(cvx_objective(p.Q, p.N), rel=1e-6)

    def test_iteration_limit(self, rng):
        while True:
            p = ci_problem(rng, 6)
            if qp.solve_active_set(p).iterations >= 2:
                break
        with pytest.raises(qp.IterationLimitError) as err:
            qp.solve_active_set(p, iter_max=1)
        assert err.value.solution.iterations == 1
        assert abs(err.value.solution.u.sum() - 1) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.data())
    def test_random_spd_matches_oracle(self, seed, M, data):
        rng = np.random.default_rng(seed)
        N = data.draw(st.integers(0, M))
        p = qp.QpProblem(random_spd(rng, M, cond=data.draw(st.floats(1.0, 1e4))), N)
        a, o = qp.solve_active_set(p), qp.solve_oracle(p)
        assert a.objective == pytest.approx(o.objective, rel=1e-8)
        assert a.u.sum() == pytest.approx(1.0, abs=1e-10)


class TestPseudoMode:
    def overload_problem(self, rng, K, Nt):
        from ciprecode.ci_overload import build_overload_geometry
        H, frame = random_slot(rng, K, Nt)
        geo = build_overload_geometry(H, frame)
        FD = geo.F @ geo.D
        return qp.QpProblem(FD @ np.linalg.inv(geo.Y) @ FD.T, frame.n_outer, qp.PSEUDO)

    @pytest.mark.parametrize("K, Nt", [(3, 2), (4, 3), (5, 3)])
    def test_matches_oracle(self, rng, K, Nt):
        for _ in range(40):
            p = self.overload_problem(rng, K, Nt)
            a, o = qp.solve_active_set(p), qp.solve_oracle(p)
            scale = np.abs(p.Q).max()
            assert abs(a.objective - o.objective) <= 1e-8 * abs(o.objective) + 1e-10 * scale
            assert a.u.sum() == pytest.approx(1.0, abs=1e-10)
            assert a.u[: p.N].min(initial=0) >= -1e-9

    def test_matches_cvxpy(self, rng):
        for _ in range(8):
            p = self.overload_problem(rng, 4, 3)
            ref = cvx_objective(p.Q, p.N)
            assert abs(qp.solve_active_set(p).objective - ref) <= 1e-6 * max(ref, 1e-3)

    def test_factor_and_eigen_paths_agree(self, rng):
        H, frame = random_slot(rng, 5, 4)
        sol, _ = solve_ci_overload(H, frame)
        from ciprecode.ci_overload import build_overload_geometry
        geo = build_overload_geometry(H, frame)
        FD = geo.F @ geo.D
        p = qp.QpProblem(FD @ np.linalg.inv(geo.Y) @ FD.T, frame.n_outer, qp.PSEUDO)
        assert qp.solve_active_set(p).objective == pytest.approx(sol.objective, rel=1e-8, abs=1e-12)

    def test_inconsistent_constraints_give_zero(self):
        # rank-one Q: u = (0, 1/2, 1/2) sums to one and lies in its null space
        L = np.array([[1.0], [1.0], [-1.0]])
        p = qp.QpProblem(L @ L.T, 1, qp.PSEUDO, factor=L)
        sol = qp.solve_active_set(p)
        assert sol.objective == pytest.approx(0.0, abs=1e-14)
        assert sol.u.sum() == pytest.approx(1.0)
        assert sol.u[0] >= 0


class TestClosedForm:
    def test_nonnegative_start(self):
        w = qp.qp_setup(qp.QpProblem(np.diag([1.0, 2.0, 4.0]), 3))
        np.testing.assert_allclose(qp.solve_closed_form_dual(w).u, w.a / w.c)

    def test_single_negative_entry(self):
        Q = np.array([[1.0, 1.2, 0.0], [1.2, 2.0, 0.0], [0.0, 0.0, 1.0]])
        w = qp.qp_setup(qp.QpProblem(Q, 3))
        assert (w.a < 0).sum() == 1
        sol = qp.solve_closed_form_dual(w)
        assert abs(sol.u[int(np.argmin(w.a))]) <= 1e-10
        # one negative entry and a single switch: the heuristic is exact here
        assert sol.objective == pytest.approx(qp.solve_oracle(w.problem).objective)

    def test_sum_and_dominance(self, rng):
        for _ in range(100):
            p = ci_problem(rng, 4)
            cf = qp.solve_closed_form_dual(qp.qp_setup(p))
            assert abs(cf.u.sum() - 1) <= 1e-10
            assert cf.iterations == 0
            # cf.u is dual infeasible in general, so it cannot beat the oracle's
            # primal scale: sqrt(p0 * objective) is the achievable t.
            assert cf.objective <= qp.solve_oracle(p).objective * (1 + 1e-9)

    def test_identical_when_start_feasible(self, rng):
        for _ in range(40):
            p = ci_problem(rng, 3)
            w = qp.qp_setup(p)
            if p.N and w.a_A.min() < 0:
                continue
            sols = [qp.solve_active_set(p), qp.solve_closed_form_dual(w), qp.solve_oracle(p)]
            for s in sols[1:]:
                np.testing.assert_allclose(s.u, sols[0].u, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 8))
    def test_sum_is_one(self, seed, M):
        rng = np.random.default_rng(seed)
        p = qp.QpProblem(random_spd(rng, M), int(rng.integers(1, M + 1)))
        assert qp.solve_closed_form_dual(qp.qp_setup(p)).u.sum() == pytest.approx(1.0, abs=1e-10)


class TestOracle:
    def test_identity(self):
        np.testing.assert_allclose(qp.solve_oracle(qp.QpProblem(np.eye(3), 3)).u, [1 / 3] * 3)

    def test_weighted(self):
        np.testing.assert_allclose(qp.solve_oracle(qp.QpProblem(np.diag([1.0, 100.0]), 2)).u,
                                   [100 / 101, 1 / 101], atol=1e-12)

    def test_size_limit(self):
        with pytest.raises(ValueError, match="limited"):
            qp.solve_oracle(qp.QpProblem(np.eye(17), 17))
