"""Square QAM constellations, Gray mapping and symbol decomposition.

Symbols are split along the detection thresholds into a real-axis and an
imaginary-axis component. A component sitting on the outermost amplitude
level is *outer* (its decision region is unbounded outward, so it may be
scaled up freely); every other component is *inner*.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64)

# Per-axis reflected Gray codes, listed from the most negative level upward.
_AXIS_GRAY = {
    2: ((0,), (1,)),
    4: ((0, 0), (0, 1), (1, 1), (1, 0)),
    8: ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0),
        (1, 1, 0), (1, 1, 1), (1, 0, 1), (1, 0, 0)),
}

_ENERGY = {4: 2.0, 16: 10.0, 64: 42.0}


@dataclass(frozen=True)
class Constellation:
    """Unit-energy square QAM with a per-axis Gray map.

    Attributes
    ----------
    order : int
        Number of points (4, 16 or 64).
    amplitude_levels : ndarray
        Sorted per-axis levels, e.g. ``(-3, -1, 1, 3) / sqrt(10)``.
    axis_bits : ndarray of int, shape (L, b)
        Bit label of each level; row ``i`` labels ``amplitude_levels[i]``.
    """

    order: int
    amplitude_levels: np.ndarray
    axis_bits: np.ndarray

    @property
    def bits_per_axis(self) -> int:
        return self.axis_bits.shape[1]

    @property
    def bits_per_symbol(self) -> int:
        return 2 * self.bits_per_axis

    @property
    def max_level(self) -> float:
        return float(self.amplitude_levels[-1])

    @property
    def points(self) -> np.ndarray:
        """All points, ordered by (real level index, imaginary level index)."""
        lv = self.amplitude_levels
        return (lv[:, None] + 1j * lv[None, :]).ravel()

    @property
    def gray_map(self) -> dict[tuple[int, ...], complex]:
        """Bits (real-axis bits first) to point."""
        out = {}
        for i, re in enumerate(self.amplitude_levels):
            for k, im in enumerate(self.amplitude_levels):
                key = tuple(self.axis_bits[i]) + tuple(self.axis_bits[k])
                out[key] = complex(re, im)
        return out

    def level_index(self, values: np.ndarray) -> np.ndarray:
        """Index of each real value in ``amplitude_levels``.

        Raises
        ------
        ValueError
            If a value is not (within 1e-9) one of the levels.
        """
        values = np.asarray(values, dtype=float)
        idx = np.abs(values[..., None] - self.amplitude_levels).argmin(axis=-1)
        if np.any(np.abs(self.amplitude_levels[idx] - values) > 1e-9):
            raise ValueError("symbol is not a point of the constellation")
        return idx


def make_square_qam(order: int) -> Constellation:
    """Build the unit-average-energy square QAM of the given order.

    >>> make_square_qam(16).amplitude_levels * np.sqrt(10)
    array([-3., -1.,  1.,  3.])
    """
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; expected one of {SUPPORTED_ORDERS}")
    q = int(round(np.sqrt(order)))
    raw = np.arange(-(q - 1), q, 2, dtype=float)
    levels = raw / np.sqrt(_ENERGY[order])
    bits = np.array(_AXIS_GRAY[q], dtype=np.int8)
    return Constellation(order, levels, bits)


def _bits_to_index(bits: np.ndarray) -> np.ndarray:
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits.astype(np.int64) @ weights


def map_bits(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Map a flat bit vector to symbols.

    Each symbol consumes ``c.bits_per_symbol`` bits: the real-axis label
    followed by the imaginary-axis label.
    """
    bits = np.asarray(bits).astype(np.int8).ravel()
    n = c.bits_per_symbol
    if bits.size % n:
        raise ValueError(f"bit count {bits.size} is not a multiple of {n}")
    grouped = bits.reshape(-1, 2, c.bits_per_axis)
    # Gray label -> level index lookup.
    lookup = np.empty(1 << c.bits_per_axis, dtype=np.int64)
    lookup[_bits_to_index(c.axis_bits)] = np.arange(len(c.amplitude_levels))
    re = c.amplitude_levels[lookup[_bits_to_index(grouped[:, 0])]]
    im = c.amplitude_levels[lookup[_bits_to_index(grouped[:, 1])]]
    return re + 1j * im


def decompose_symbol(s_k: complex) -> tuple[float, float]:
    """Split a symbol into its real-axis and imaginary-axis amplitudes."""
    s_k = complex(s_k)
    return s_k.real, s_k.imag


def classify_components(s: np.ndarray, c: Constellation) -> np.ndarray:
    """Outer/inner label of each of the ``2K`` interleaved components.

    Returns
    -------
    ndarray of bool, shape (2K,)
        ``True`` for outer components (amplitude equal to the largest
        level), ``False`` for inner ones. Order is
        ``(Re s_1, Im s_1, Re s_2, ...)``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    comps = np.empty(2 * s.size)
    comps[0::2] = s.real
    comps[1::2] = s.imag
    idx = c.level_index(comps)
    top = len(c.amplitude_levels) - 1
    return (idx == 0) | (idx == top)


@dataclass(frozen=True)
class SymbolFrame:
    """A symbol vector together with its expanded representation.

    Attributes
    ----------
    s : complex ndarray, shape (K,)
    s_E : complex ndarray, shape (2K,)
        ``(Re s_1, j Im s_1, Re s_2, j Im s_2, ...)`` so that pairwise sums
        rebuild ``s``.
    s_hat : complex ndarray, shape (K,)
        Elementwise reciprocals ``1 / s_k``.
    U : ndarray, shape (K, 2K)
        Pairing matrix ``I_K ⊗ [1, 1]``.
    mask : bool ndarray, shape (2K,)
        ``True`` marks outer components.
    """

    s: np.ndarray
    s_E: np.ndarray
    s_hat: np.ndarray
    U: np.ndarray
    mask: np.ndarray

    @property
    def K(self) -> int:
        return self.s.size

    @property
    def n_outer(self) -> int:
        return int(self.mask.sum())

    @property
    def outer(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def inner(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    @property
    def B(self) -> np.ndarray:
        """``U diag(s_E)``, the map from component scalings to received symbols."""
        return self.U * self.s_E[None, :]


def build_expansion(s: np.ndarray, c: Constellation) -> SymbolFrame:
    """Build the :class:`SymbolFrame` for symbols ``s`` drawn from ``c``."""
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    if np.any(s == 0):
        raise ValueError("zero symbol has no reciprocal")
    K = s.size
    s_E = np.empty(2 * K, dtype=complex)
    s_E[0::2] = s.real
    s_E[1::2] = 1j * s.imag
    U = np.kron(np.eye(K), np.ones((1, 2)))
    return SymbolFrame(s=s, s_E=s_E, s_hat=1.0 / s, U=U, mask=classify_components(s, c))


def _nearest_levels(x: np.ndarray, c: Constellation) -> np.ndarray:
    return np.abs(np.asarray(x)[..., None] - c.amplitude_levels).argmin(axis=-1)


def detect(r: np.ndarray, scale: float | np.ndarray, c: Constellation) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised minimum-distance detection.

    Square QAM decision regions factor per axis, so the nearest point is
    found independently on each axis.

    Returns
    -------
    symbols : complex ndarray, same shape as ``r``
    bits : int8 ndarray, shape ``r.shape + (bits_per_symbol,)``
    """
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise ValueError("detection scale must be positive")
    y = np.asarray(r, dtype=complex) / scale
    i_re = _nearest_levels(y.real, c)
    i_im = _nearest_levels(y.imag, c)
    sym = c.amplitude_levels[i_re] + 1j * c.amplitude_levels[i_im]
    bits = np.concatenate([c.axis_bits[i_re], c.axis_bits[i_im]], axis=-1)
    return sym, bits


def detect_symbol(r_k: complex, scale: float, c: Constellation) -> tuple[complex, np.ndarray]:
    """Detect a single received sample; see :func:`detect`."""
    sym, bits = detect(np.asarray([r_k]), scale, c)
    return complex(sym[0]), bits[0]
