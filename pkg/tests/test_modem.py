"""Tests for constellations, Gray mapping, decomposition and detection."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciprecode.modem import (build_expansion, classify_components, decompose_symbol, detect,
                             detect_symbol, make_square_qam, map_bits)

R10, R42 = np.sqrt(10), np.sqrt(42)


class TestConstellation:
    @pytest.mark.parametrize("order, raw, norm", [
        (4, [-1, 1], np.sqrt(2)),
        (16, [-3, -1, 1, 3], R10),
        (64, [-7, -5, -3, -1, 1, 3, 5, 7], R42),
    ])
    def test_levels(self, order, raw, norm):
        np.testing.assert_allclose(make_square_qam(order).amplitude_levels, np.array(raw) / norm)

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_unit_energy(self, order):
        pts = make_square_qam(order).points
        assert pts.size == order
        assert abs(np.mean(np.abs(pts) ** 2) - 1.0) <= 1e-12

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_gray_adjacency(self, order):
        bits = make_square_qam(order).axis_bits
        assert len({tuple(b) for b in bits}) == len(bits)
        assert np.all(np.abs(np.diff(bits, axis=0)).sum(axis=1) == 1)

    @pytest.mark.parametrize("order", [8, 32, 256])
    def test_unsupported(self, order):
        with pytest.raises(ValueError, match="unsupported"):
            make_square_qam(order)


class TestMapBits:
    def test_declared_16qam_axis_table(self, qam16):
        table = {(0, 0): -3, (0, 1): -1, (1, 1): 1, (1, 0): 3}
        for (b0, b1), (b2, b3) in itertools.product(table, table):
            got = map_bits([b0, b1, b2, b3], qam16)[0]
            assert got == pytest.approx((table[b0, b1] + 1j * table[b2, b3]) / R10, abs=1e-15)

    def test_all_zero(self, qam16):
        assert map_bits([0, 0, 0, 0], qam16)[0] == pytest.approx((-3 - 3j) / R10)

    def test_real_bits_lead(self, qam16):
        # 10 -> +3 on the real axis, 11 -> +1 on the imaginary axis
        assert map_bits([1, 0, 1, 1], qam16)[0] == pytest.approx((3 + 1j) / R10)
        assert map_bits([1, 1, 1, 1], qam16)[0] == pytest.approx((1 + 1j) / R10)

    def test_declared_64qam_axis_table(self, qam64):
        labels = ["000", "001", "011", "010", "110", "111", "101", "100"]
        for level, lab in zip(range(-7, 8, 2), labels):
            bits = [int(b) for b in lab] + [0, 0, 0]
            assert map_bits(bits, qam64)[0] == pytest.approx((level - 7j) / R42)

    def test_length_mismatch(self, qam16):
        with pytest.raises(ValueError, match="multiple"):
            map_bits([0, 1, 1], qam16)

    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from([4, 16, 64]), st.data())
    def test_roundtrip(self, order, data):
        c = make_square_qam(order)
        n = data.draw(st.integers(1, 6)) * c.bits_per_symbol
        bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), dtype=np.int8)
        _, decoded = detect(map_bits(bits, c), 1.0, c)
        np.testing.assert_array_equal(decoded.ravel(), bits)


class TestDecomposition:
    def test_example(self):
        a, b = decompose_symbol((3 + 1j) / R10)
        assert (a, b) == pytest.approx((3 / R10, 1 / R10))

    def test_real_symbol(self):
        assert decompose_symbol(0.5)[1] == 0.0

    def test_recomposes(self, qam16):
        for p in qam16.points:
            a, b = decompose_symbol(p)
            assert a + 1j * b == p


class TestClassify:
    @pytest.mark.parametrize("sym, expected", [
        ((3 + 3j) / R10, [True, True]),
        ((1 + 1j) / R10, [False, False]),
        ((3 + 1j) / R10, [True, False]),
        ((-1 - 3j) / R10, [False, True]),
    ])
    def test_16qam(self, qam16, sym, expected):
        np.testing.assert_array_equal(classify_components([sym], qam16), expected)

    def test_qpsk_all_outer(self):
        c = make_square_qam(4)
        assert classify_components(c.points, c).all()

    def test_not_a_point(self, qam16):
        with pytest.raises(ValueError, match="not a point"):
            classify_components([0.5 + 0.5j], qam16)

    @pytest.mark.parametrize("order", [16, 64])
    def test_outer_iff_max_amplitude(self, order):
        c = make_square_qam(order)
        mask = classify_components(c.points, c)
        comps = np.column_stack([c.points.real, c.points.imag]).ravel()
        np.testing.assert_array_equal(mask, np.isclose(np.abs(comps), c.max_level))


class TestExpansion:
    def test_pairing_matrix(self, qam16):
        f = build_expansion(np.array([1 + 1j, 3 - 1j]) / R10, qam16)
        np.testing.assert_array_equal(f.U, [[1, 1, 0, 0], [0, 0, 1, 1]])

    def test_layout_and_recomposition(self, rng, qam64):
        s = map_bits(rng.integers(0, 2, 5 * 6), qam64)
        f = build_expansion(s, qam64)
        np.testing.assert_array_equal(f.s_E[0::2], s.real)
        np.testing.assert_array_equal(f.s_E[1::2], 1j * s.imag)
        np.testing.assert_allclose(f.U @ (np.ones(10) * f.s_E), s, atol=1e-15)
        assert f.mask.size == 10

    def test_reciprocals(self, rng, qam16):
        s = map_bits(rng.integers(0, 2, 8 * 4), qam16)
        f = build_expansion(s, qam16)
        assert f.s_hat @ f.s == pytest.approx(8)

    def test_zero_symbol(self, qam16):
        with pytest.raises(ValueError, match="zero"):
            build_expansion(np.array([0j]), qam16)


class TestDetection:
    def test_noiseless_scaled(self, qam16):
        for p in qam16.points:
            assert detect_symbol(0.37 * p, 0.37, qam16)[0] == p

    def test_outward_push(self, qam16):
        # Outer components may be pushed arbitrarily far outward.
        s = (3 + 1j) / R10
        sym, bits = detect_symbol(2.0 * (s + 5.0), 2.0, qam16)
        assert sym == pytest.approx(s)
        np.testing.assert_array_equal(bits, [1, 0, 1, 1])

    def test_bad_scale(self, qam16):
        with pytest.raises(ValueError):
            detect_symbol(1.0, 0.0, qam16)

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_matches_brute_force(self, rng, order):
        c = make_square_qam(order)
        r = 1.5 * (rng.standard_normal(500) + 1j * rng.standard_normal(500))
        sym, _ = detect(r, 1.3, c)
        brute = c.points[np.abs(r[:, None] / 1.3 - c.points[None, :]).argmin(axis=1)]
        np.testing.assert_array_equal(sym, brute)
