"""Linear baselines with per-slot power normalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import SingularSystemError, check_conditioning


@dataclass(frozen=True)
class Precoder:
    """A slot's precoding matrix and the resulting transmit vector.

    Attributes
    ----------
    W : complex ndarray, shape (Nt, K)
    x : complex ndarray, shape (Nt,)
        ``W s``.
    rx_scale : float
        Amplitude by which receivers divide before detection.
    label : str
    """

    W: np.ndarray
    x: np.ndarray
    rx_scale: float
    label: str

    @property
    def power(self) -> float:
        return float(np.vdot(self.x, self.x).real)


def _normalised(H: np.ndarray, s: np.ndarray, p0: float, loading: float, label: str) -> Precoder:
    H = np.asarray(H, dtype=complex)
    s = np.asarray(s, dtype=complex)
    if p0 <= 0:
        raise ValueError("p0 must be positive")
    K = H.shape[0]
    if s.shape != (K,):
        raise ValueError(f"symbol vector shape {s.shape} does not match {K} users")
    A = H @ H.conj().T + loading * np.eye(K)
    check_conditioning(A, "HHᴴ" if loading == 0 else "regularised HHᴴ")
    W0 = H.conj().T @ np.linalg.inv(A)
    x0 = W0 @ s
    norm = float(np.linalg.norm(x0))
    if norm == 0:
        raise SingularSystemError(f"{label} transmit vector vanished", float("inf"))
    beta = np.sqrt(p0) / norm
    return Precoder(W=beta * W0, x=beta * x0, rx_scale=beta, label=label)


def zf_precode(H: np.ndarray, s: np.ndarray, p0: float = 1.0) -> Precoder:
    """Zero forcing: ``x = β Hᴴ(HHᴴ)⁻¹ s`` with ``‖x‖² = p0``.

    Raises
    ------
    ValueError
        More users than antennas.
    SingularSystemError
        ``HHᴴ`` ill-conditioned.
    """
    K, Nt = np.shape(H)
    if K > Nt:
        raise ValueError(f"zero forcing needs K <= Nt, got K={K}, Nt={Nt}")
    return _normalised(H, s, p0, 0.0, "ZF")


def rzf_precode(H: np.ndarray, s: np.ndarray, p0: float = 1.0, sigma2: float = 0.0) -> Precoder:
    """Regularised zero forcing with MMSE loading ``K σ² / p0``.

    Raises
    ------
    ValueError
        ``sigma2 = 0`` with more users than antennas.
    """
    K, Nt = np.shape(H)
    if p0 <= 0:
        raise ValueError("p0 must be positive")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if sigma2 == 0 and K > Nt:
        raise ValueError("unregularised inversion is singular for K > Nt")
    return _normalised(H, s, p0, K * sigma2 / p0, "RZF")
