"""Monte Carlo harness: BER sweeps, overload feasibility and iteration counts.

Randomness is organised as independent counter-based (Philox) substreams
keyed by ``(seed, stream, K, Nt, index)``. Channels, bits and noise each
have their own stream, so every scheme in a run sees exactly the same
realisations, and results do not depend on how slots are split across
worker processes.

Within a slot one unit-variance noise vector is drawn and scaled to each
SNR point, which keeps SNR curves paired as well.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import qp
from .baselines import Precoder, rzf_precode, zf_precode
from .ci_core import solve_ci
from .ci_overload import solve_ci_overload
from .modem import Constellation, build_expansion, detect, make_square_qam, map_bits
from .numerics import SingularSystemError

SCHEMES = ("ZF", "RZF", "CI-Iterative", "CI-CF", "CI-Oracle")
CI_SOLVER = {"CI-Iterative": "active_set", "CI-CF": "closed_form", "CI-Oracle": "oracle"}

STREAM_CHANNEL, STREAM_BITS, STREAM_NOISE = 0, 1, 2

#: Channel redraws allowed per slot after numerically degenerate draws.
MAX_REDRAWS = 8

# Failures that indicate a measure-zero channel rather than a bug.
_REDRAW_ERRORS = (SingularSystemError, qp.DegenerateProblemError, qp.SingularProblemError)


class SlotError(RuntimeError):
    """A slot failed for a reason other than a degenerate channel draw."""

    def __init__(self, message: str, *, K: int, Nt: int, slot: int, scheme: str | None = None):
        where = f"K={K} Nt={Nt} slot={slot}" + (f" scheme={scheme}" if scheme else "")
        super().__init__(f"{message} [{where}]")
        self.K, self.Nt, self.slot, self.scheme = K, Nt, slot, scheme


@dataclass(frozen=True)
class SimConfig:
    """Experiment parameters.

    Attributes
    ----------
    Nt : int or None
        Transmit antennas; ``None`` ties ``Nt`` to each ``K`` value.
    K : tuple of int
        User counts; BER sweeps normally use a single value.
    order : int
        QAM order.
    p0 : float
        Total transmit power.
    snr_db : tuple of float
        ``10 log10(1/σ²)`` points.
    trials : int
        Slots per ``(K, Nt)`` point.
    seed : int
    schemes : tuple of str
        Subset of :data:`SCHEMES`.
    channel_reuse : int
        Consecutive slots sharing one channel draw.
    iter_max : int
        Active-set iteration cap.
    threads : int
        Worker processes; ``0`` uses every CPU.
    """

    Nt: int | None
    K: tuple = (4,)
    order: int = 16
    p0: float = 1.0
    snr_db: tuple = ()
    trials: int = 1000
    seed: int = 0
    schemes: tuple = ("RZF", "CI-Iterative")
    channel_reuse: int = 1
    iter_max: int = 100
    threads: int = 1

    def __post_init__(self):
        K = (self.K,) if isinstance(self.K, (int, np.integer)) else tuple(int(k) for k in self.K)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "snr_db", tuple(float(x) for x in self.snr_db))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if not K or min(K) < 1:
            raise ValueError("K values must be positive")
        if self.Nt is not None and self.Nt < 1:
            raise ValueError("Nt must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.p0 <= 0:
            raise ValueError("p0 must be positive")
        if self.channel_reuse < 1:
            raise ValueError("channel_reuse must be at least 1")
        if self.iter_max < 1:
            raise ValueError("iter_max must be at least 1")
        if self.threads < 0:
            raise ValueError("threads must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if not all(np.isfinite(self.snr_db)):
            raise ValueError("SNR values must be finite")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ValueError(f"unknown scheme(s) {unknown}; expected a subset of {SCHEMES}")
        make_square_qam(self.order)
        for K_, Nt_ in self.points():
            if "ZF" in self.schemes and K_ > Nt_:
                raise ValueError(f"ZF is undefined for K={K_} > Nt={Nt_}")
            if "CI-Oracle" in self.schemes and 2 * K_ > qp.ORACLE_MAX_N:
                raise ValueError(f"CI-Oracle enumeration supports 2K <= {qp.ORACLE_MAX_N}, got K={K_}")

    def points(self) -> list[tuple[int, int]]:
        """``(K, Nt)`` pairs in sweep order."""
        return [(k, k if self.Nt is None else self.Nt) for k in self.K]

    @property
    def constellation(self) -> Constellation:
        return make_square_qam(self.order)


def substream(seed: int, stream: int, *index: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, stream, *index)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream, *index))
    return np.random.Generator(np.random.Philox(ss))


def draw_channel(K: int, Nt: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. circularly-symmetric complex Gaussian entries of unit variance."""
    if K < 1 or Nt < 1:
        raise ValueError("K and Nt must be positive")
    return (rng.standard_normal((K, Nt)) + 1j * rng.standard_normal((K, Nt))) / np.sqrt(2.0)


def unit_noise(K: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.standard_normal(K) + 1j * rng.standard_normal(K)) / np.sqrt(2.0)


def snr_to_noise_variance(snr_db: float) -> float:
    return float(10.0 ** (-snr_db / 10.0))


@dataclass(frozen=True)
class SlotDiagnostics:
    """What happened when a scheme precoded one slot."""

    scheme: str
    iterations: int = 0
    feasible: bool | None = None
    fallback: bool = False
    rx_scale: float = 0.0


def _ci_precoder(scheme, H, frame, p0, iter_max):
    """CI precoder and diagnostics; precoder is None for an infeasible overloaded slot."""
    solver = CI_SOLVER[scheme]
    K, Nt = H.shape
    if K <= Nt:
        sol, pre = solve_ci(H, frame, p0, solver=solver, iter_max=iter_max)
        return pre, SlotDiagnostics(scheme, sol.iterations, True, False, pre.rx_scale)
    sol, pre = solve_ci_overload(H, frame, p0, solver=solver, iter_max=iter_max)
    if not sol.feasible:
        pre = None
    return pre, SlotDiagnostics(scheme, sol.iterations, sol.feasible, not sol.feasible,
                                pre.rx_scale if pre else 0.0)


def build_precoder(scheme: str, H: np.ndarray, s: np.ndarray, frame, p0: float, sigma2: float,
                   iter_max: int = 100) -> tuple[Precoder, SlotDiagnostics]:
    """Precoder of ``scheme`` for one slot, with RZF standing in for infeasible CI slots."""
    K, Nt = H.shape
    if scheme == "ZF":
        if K > Nt:
            raise ValueError(f"ZF is undefined for K={K} > Nt={Nt}")
        pre = zf_precode(H, s, p0)
        return pre, SlotDiagnostics(scheme, rx_scale=pre.rx_scale)
    if scheme == "RZF":
        pre = rzf_precode(H, s, p0, sigma2)
        return pre, SlotDiagnostics(scheme, rx_scale=pre.rx_scale)
    if scheme not in CI_SOLVER:
        raise ValueError(f"unknown scheme {scheme!r}")
    pre, diag = _ci_precoder(scheme, H, frame, p0, iter_max)
    if pre is None:
        pre = rzf_precode(H, s, p0, sigma2)
        diag = SlotDiagnostics(scheme, diag.iterations, False, True, pre.rx_scale)
    return pre, diag


def transmit_slot(H: np.ndarray, bits: np.ndarray, scheme: str, p0: float, sigma2: float,
                  rng: np.random.Generator, constellation: Constellation,
                  iter_max: int = 100) -> tuple[np.ndarray, SlotDiagnostics]:
    """Send one slot of bits over ``H`` and detect them.

    Returns
    -------
    decoded : int8 ndarray, same length as ``bits``
    diagnostics : SlotDiagnostics
    """
    s = map_bits(bits, constellation)
    frame = build_expansion(s, constellation)
    pre, diag = build_precoder(scheme, H, s, frame, p0, sigma2, iter_max)
    r = H @ pre.x + np.sqrt(sigma2) * unit_noise(H.shape[0], rng)
    _, decoded = detect(r, pre.rx_scale, constellation)
    return decoded.reshape(-1), diag


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BerRow:
    """Error counts of one scheme at one SNR point."""

    scheme: str
    K: int
    Nt: int
    snr_db: float
    bit_errors: int
    bits: int
    trials: int
    iterations: int = 0
    feasible: int | None = None
    fallbacks: int = 0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits

    @property
    def stderr(self) -> float:
        p = self.ber
        return float(np.sqrt(p * (1.0 - p) / self.bits))

    @property
    def mean_iterations(self) -> float | None:
        return self.iterations / self.trials if self.scheme in CI_SOLVER else None

    @property
    def feasibility(self) -> float | None:
        return None if self.feasible is None else self.feasible / self.trials


@dataclass(frozen=True)
class BerResult:
    config: SimConfig
    rows: tuple
    redraws: int = 0

    def row(self, scheme: str, snr_db: float, K: int | None = None) -> BerRow:
        for r in self.rows:
            if r.scheme == scheme and r.snr_db == snr_db and (K is None or r.K == K):
                return r
        raise KeyError((scheme, snr_db, K))

    def ber(self, scheme: str, snr_db: float, K: int | None = None) -> float:
        return self.row(scheme, snr_db, K).ber


@dataclass(frozen=True)
class FeasibilityRow:
    """Feasibility and iteration statistics of one CI scheme at one size."""

    scheme: str
    K: int
    Nt: int
    trials: int
    feasible: int
    iterations: int
    iterations_sq: int

    @property
    def fraction(self) -> float:
        return self.feasible / self.trials

    @property
    def mean_iterations(self) -> float:
        return self.iterations / self.trials

    @property
    def iterations_stderr(self) -> float:
        n = self.trials
        if n < 2:
            return 0.0
        var = (self.iterations_sq - self.iterations**2 / n) / (n - 1)
        return float(np.sqrt(max(var, 0.0) / n))


@dataclass(frozen=True)
class FeasibilityResult:
    config: SimConfig
    rows: tuple
    redraws: int = 0

    def row(self, scheme: str, K: int) -> FeasibilityRow:
        for r in self.rows:
            if r.scheme == scheme and r.K == K:
                return r
        raise KeyError((scheme, K))


# ---------------------------------------------------------------------------
# workers
# ---------------------------------------------------------------------------


@dataclass
class _Tally:
    errors: np.ndarray
    iterations: np.ndarray
    iterations_sq: np.ndarray
    feasible: np.ndarray
    redraws: int = 0

    @classmethod
    def empty(cls, n_schemes: int, n_snr: int) -> "_Tally":
        z = lambda *s: np.zeros(s, dtype=np.int64)  # noqa: E731
        return cls(z(n_schemes, max(n_snr, 1)), z(n_schemes), z(n_schemes), z(n_schemes))

    def __iadd__(self, other: "_Tally") -> "_Tally":
        self.errors += other.errors
        self.iterations += other.iterations
        self.iterations_sq += other.iterations_sq
        self.feasible += other.feasible
        self.redraws += other.redraws
        return self


def _slot_inputs(cfg: SimConfig, K: int, Nt: int, slot: int, attempt: int, c: Constellation):
    H = draw_channel(K, Nt, substream(cfg.seed, STREAM_CHANNEL, K, Nt, slot // cfg.channel_reuse, attempt))
    bits = substream(cfg.seed, STREAM_BITS, K, Nt, slot).integers(0, 2, K * c.bits_per_symbol, dtype=np.int8)
    return H, bits


def _with_redraws(cfg, K, Nt, slot, c, work):
    """Run ``work(H, bits)``, redrawing the channel on degenerate draws."""
    for attempt in range(MAX_REDRAWS + 1):
        H, bits = _slot_inputs(cfg, K, Nt, slot, attempt, c)
        try:
            return work(H, bits), attempt
        except _REDRAW_ERRORS:
            continue
        except qp.QpError as exc:
            raise SlotError(str(exc), K=K, Nt=Nt, slot=slot) from exc
    raise SlotError(f"channel degenerate after {MAX_REDRAWS} redraws", K=K, Nt=Nt, slot=slot)


def _ber_chunk(cfg: SimConfig, K: int, Nt: int, start: int, stop: int) -> _Tally:
    c = cfg.constellation
    schemes = cfg.schemes
    sigma2 = [snr_to_noise_variance(x) for x in cfg.snr_db]
    tally = _Tally.empty(len(schemes), len(sigma2))

    def precode_all(H, bits):
        s = map_bits(bits, c)
        frame = build_expansion(s, c)
        out = []
        for scheme in schemes:
            if scheme == "ZF":
                out.append([build_precoder(scheme, H, s, frame, cfg.p0, 0.0)] * len(sigma2))
            elif scheme == "RZF":
                out.append([build_precoder(scheme, H, s, frame, cfg.p0, v) for v in sigma2])
            else:
                pre, diag = _ci_precoder(scheme, H, frame, cfg.p0, cfg.iter_max)
                if pre is not None:
                    out.append([(pre, diag)] * len(sigma2))
                else:
                    out.append([(rzf_precode(H, s, cfg.p0, v), diag) for v in sigma2])
        return out

    for slot in range(start, stop):
        (H, bits, per_scheme), attempt = _with_redraws(
            cfg, K, Nt, slot, c, lambda H, b: (H, b, precode_all(H, b)))
        tally.redraws += attempt
        w = unit_noise(K, substream(cfg.seed, STREAM_NOISE, K, Nt, slot))
        bits2 = bits.reshape(K, -1)
        for i, entries in enumerate(per_scheme):
            diag = entries[0][1]
            tally.iterations[i] += diag.iterations
            tally.iterations_sq[i] += diag.iterations**2
            tally.feasible[i] += bool(diag.feasible)
            for j, (pre, _) in enumerate(entries):
                r = H @ pre.x + np.sqrt(sigma2[j]) * w
                _, dec = detect(r, pre.rx_scale, c)
                tally.errors[i, j] += int(np.count_nonzero(dec != bits2))
    return tally


def _feasibility_chunk(cfg: SimConfig, K: int, Nt: int, start: int, stop: int) -> _Tally:
    c = cfg.constellation
    schemes = [s for s in cfg.schemes if s in CI_SOLVER]
    tally = _Tally.empty(len(schemes), 0)

    def solve_all(H, bits):
        frame = build_expansion(map_bits(bits, c), c)
        return [_ci_precoder(s, H, frame, cfg.p0, cfg.iter_max)[1] for s in schemes]

    for slot in range(start, stop):
        diags, attempt = _with_redraws(cfg, K, Nt, slot, c, solve_all)
        tally.redraws += attempt
        for i, d in enumerate(diags):
            tally.iterations[i] += d.iterations
            tally.iterations_sq[i] += d.iterations**2
            tally.feasible[i] += bool(d.feasible)
    return tally


def _chunks(trials: int, workers: int) -> list[tuple[int, int]]:
    n = max(1, min(trials, 4 * workers))
    edges = np.linspace(0, trials, n + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run(worker, cfg: SimConfig, K: int, Nt: int, n_schemes: int, n_snr: int) -> _Tally:
    workers = cfg.threads or os.cpu_count() or 1
    total = _Tally.empty(n_schemes, n_snr)
    if workers == 1:
        total += worker(cfg, K, Nt, 0, cfg.trials)
        return total
    parts = _chunks(cfg.trials, workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(worker, cfg, K, Nt, a, b) for a, b in parts]
        for fut in futures:
            total += fut.result()
    return total


def run_ber_sweep(cfg: SimConfig) -> BerResult:
    """Bit error counts of every scheme at every SNR and ``(K, Nt)`` point.

    Raises
    ------
    SlotError
        A slot failed for a non-degenerate reason (e.g. iteration limit).
    """
    if not cfg.snr_db:
        raise ValueError("BER sweep needs at least one SNR point")
    c = cfg.constellation
    rows, redraws = [], 0
    for K, Nt in cfg.points():
        tally = _run(_ber_chunk, cfg, K, Nt, len(cfg.schemes), len(cfg.snr_db))
        redraws += tally.redraws
        bits = cfg.trials * K * c.bits_per_symbol
        for i, scheme in enumerate(cfg.schemes):
            ci = scheme in CI_SOLVER
            feasible = int(tally.feasible[i]) if ci else None
            for j, snr in enumerate(cfg.snr_db):
                rows.append(BerRow(scheme, K, Nt, snr, int(tally.errors[i, j]), bits, cfg.trials,
                                   iterations=int(tally.iterations[i]), feasible=feasible,
                                   fallbacks=cfg.trials - feasible if ci else 0))
    return BerResult(cfg, tuple(rows), redraws)


def run_feasibility_stats(cfg: SimConfig) -> FeasibilityResult:
    """Feasible fraction and active-set iteration statistics per ``(K, Nt)``.

    Only CI schemes in ``cfg.schemes`` are evaluated; slots with
    ``K ≤ Nt`` are always feasible.
    """
    schemes = [s for s in cfg.schemes if s in CI_SOLVER]
    if not schemes:
        raise ValueError("feasibility statistics need at least one CI scheme")
    rows, redraws = [], 0
    for K, Nt in cfg.points():
        tally = _run(_feasibility_chunk, cfg, K, Nt, len(schemes), 0)
        redraws += tally.redraws
        for i, scheme in enumerate(schemes):
            rows.append(FeasibilityRow(scheme, K, Nt, cfg.trials, int(tally.feasible[i]),
                                       int(tally.iterations[i]), int(tally.iterations_sq[i])))
    return FeasibilityResult(cfg, tuple(rows), redraws)
