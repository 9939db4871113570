"""Tests for the dense linear-algebra kernels."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ciprecode.ci_overload import consistency_matrix
from ciprecode.numerics import (SingularSystemError, check_conditioning, numeric_rank,
                                pseudo_inverse, solve_symmetric, svd_null_basis)
from conftest import random_slot


class TestSolveSymmetric:
    def test_identity(self):
        np.testing.assert_array_equal(solve_symmetric(np.eye(2), np.array([1.0, 2.0])), [1.0, 2.0])

    def test_diagonal(self):
        np.testing.assert_allclose(solve_symmetric(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1.0, 1.0])

    def test_random_spd_residual(self, rng):
        G = rng.standard_normal((6, 6))
        A = G @ G.T + 0.1 * np.eye(6)
        b = rng.standard_normal(6)
        x = solve_symmetric(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * (1 + np.linalg.norm(b))

    def test_indefinite(self, rng):
        A = np.diag([3.0, -1.0, 2.0])
        A[0, 2] = A[2, 0] = 0.5
        b = rng.standard_normal(3)
        np.testing.assert_allclose(A @ solve_symmetric(A, b), b, atol=1e-12)

    def test_matrix_rhs(self, rng):
        G = rng.standard_normal((4, 4))
        A = G @ G.T + np.eye(4)
        np.testing.assert_allclose(A @ solve_symmetric(A, np.eye(4)), np.eye(4), atol=1e-10)

    def test_singular_carries_condition(self):
        with pytest.raises(SingularSystemError) as err:
            solve_symmetric(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))
        assert err.value.condition > 1e15
        assert "condition estimate" in str(err.value)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            solve_symmetric(np.eye(3), np.ones(2))


def test_check_conditioning_rejects():
    with pytest.raises(SingularSystemError):
        check_conditioning(np.diag([1.0, 1e-13]), "test matrix")
    assert check_conditioning(np.diag([1.0, 1e-3]), "ok") == pytest.approx(1e3)


def _penrose_residuals(A, P):
    return (np.abs(A @ P @ A - A).max(), np.abs(P @ A @ P - P).max(),
            np.abs((A @ P).conj().T - A @ P).max(), np.abs((P @ A).conj().T - P @ A).max())


class TestPseudoInverse:
    def test_identity(self):
        np.testing.assert_allclose(pseudo_inverse(np.eye(3)), np.eye(3))

    def test_diagonal_truncation(self):
        np.testing.assert_array_equal(pseudo_inverse(np.diag([1.0, 0.0])), np.diag([1.0, 0.0]))

    def test_zero_matrix(self):
        np.testing.assert_array_equal(pseudo_inverse(np.zeros((2, 3))), np.zeros((3, 2)))

    def test_rank_deficient_gram(self, rng):
        # K x K Gram of a rank-Nt channel (K=3, Nt=2).
        H = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
        A = H @ H.conj().T
        P = pseudo_inverse(A)
        smax = np.linalg.norm(A, 2)
        for r in _penrose_residuals(A, P):
            assert r <= 1e-9 * max(smax, 1.0)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
                  elements=st.integers(-100, 100).map(lambda v: v / 10)))
    def test_penrose_identities(self, A):
        P = pseudo_inverse(A)
        smax = np.linalg.norm(A, 2) if A.any() else 1.0
        scale = max(smax, 1.0) * max(np.linalg.norm(P, 2), 1.0) ** 2
        for r in _penrose_residuals(A, P):
            assert r <= 1e-9 * scale


class TestNullBasisAndRank:
    def test_axis(self):
        D = svd_null_basis(np.array([[1.0, 0.0]]))
        assert D.shape == (2, 1)
        np.testing.assert_allclose(np.abs(D[:, 0]), [0.0, 1.0], atol=1e-15)

    def test_full_rank_is_empty(self):
        assert svd_null_basis(np.eye(2)).shape == (2, 0)

    def test_rank_trivial(self):
        assert numeric_rank(np.zeros((3, 3))) == 0
        assert numeric_rank(np.eye(3)) == 3

    def test_consistency_matrix_dimensions(self, rng):
        # K=3, Nt=2: rank 2(K-Nt) = 2 and a 2Nt = 4 dimensional null space.
        H, frame = random_slot(rng, 3, 2)
        _, P_E, _ = consistency_matrix(H, frame)
        assert numeric_rank(P_E) == 2
        D = svd_null_basis(P_E)
        assert D.shape == (6, 4)
        assert np.linalg.norm(P_E @ D, axis=0).max() <= 1e-9

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-5, 5, allow_nan=False)))
    def test_rank_nullity(self, A):
        D = svd_null_basis(A)
        assert numeric_rank(A) + D.shape[1] == A.shape[1]
        np.testing.assert_allclose(D.T @ D, np.eye(D.shape[1]), atol=1e-10)
        smax = np.linalg.norm(A, 2)
        assert np.linalg.norm(A @ D) <= 1e-9 * max(smax, 1e-300) * np.sqrt(A.shape[1]) + 1e-300
