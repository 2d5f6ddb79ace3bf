"""Zadoff-Chu preamble: construction, detection, CFO and SNR estimation.

The preamble is ``n_short`` repetitions of a short ZC sequence, each signed
by one chip of an m-sequence, followed by one long ZC sequence; 1031
samples in total.

Detection runs in two stages.  A differential correlator pairs the
matched-filter outputs of consecutive short repetitions (undoing the known
chip signs), which is insensitive to CFO and yields both a timing candidate
and a coarse CFO from the common phase rotation.  Candidates are then
verified by coherent correlation against the whole CFO-corrected preamble.
The verification statistic is the ratio of projected to residual energy
``X = (L - 1) rho / (1 - rho)`` with ``rho`` the normalised correlation;
it is mapped into [0, 1] as ``X / (X + kappa)`` so the default threshold of
0.5 sits at ``X = kappa``.  Under noise alone ``X`` is roughly Exp(1), so
``kappa = 20`` puts the per-candidate false-alarm rate near ``exp(-20)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from math import gcd
from typing import Any

import numpy as np
from scipy import signal

from .errors import ConfigLengthError, InvalidRoot, RequiresDetection, TooShort
from .waveforms import IQRecord

PREAMBLE_LENGTH = 1031
SNR_CAP_DB = 120.0


def zc_sequence(root: int, length: int) -> np.ndarray:
    if length < 1:
        raise InvalidRoot(f"length must be >= 1, got {length}")
    if gcd(root, length) != 1:
        raise InvalidRoot(f"root {root} is not coprime with length {length}")
    n = np.arange(length, dtype=np.float64)
    # reduce the phase argument modulo 2*length before scaling to keep it exact
    k = (root * n * (n + 1)) % (2 * length)
    return np.exp(-1j * np.pi * k / length)


def mseq_chips(taps: tuple[int, ...], count: int) -> np.ndarray:
    """First ``count`` chips (+1/-1) of the m-sequence for ``taps = (degree, *feedback)``."""
    degree, *feedback = taps
    seq, _ = signal.max_len_seq(degree, taps=feedback or None)
    return 1.0 - 2.0 * seq[:count]


@dataclass(frozen=True)
class PreambleConfig:
    n_short: int = 10
    len_short: int = 61
    root_short: int = 25
    len_long: int = 421
    root_long: int = 139
    mseq_taps: tuple[int, ...] = (4, 1)

    def __post_init__(self):
        object.__setattr__(self, "mseq_taps", tuple(self.mseq_taps))

    @property
    def length(self) -> int:
        return self.n_short * self.len_short + self.len_long

    def validate(self) -> None:
        if self.length != PREAMBLE_LENGTH:
            raise ConfigLengthError(
                f"{self.n_short}*{self.len_short} + {self.len_long} = {self.length}, "
                f"expected {PREAMBLE_LENGTH}"
            )
        if gcd(self.root_short, self.len_short) != 1 or gcd(self.root_long, self.len_long) != 1:
            raise InvalidRoot("ZC roots must be coprime with their lengths")
        if 2 ** self.mseq_taps[0] - 1 < self.n_short:
            raise ConfigLengthError("m-sequence shorter than the number of short repetitions")
        if self.n_short < 2:
            raise ConfigLengthError("at least two short repetitions are needed")

    def chips(self) -> np.ndarray:
        return mseq_chips(self.mseq_taps, self.n_short)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["mseq_taps"] = list(self.mseq_taps)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PreambleConfig":
        return cls(**d)


def build_preamble(cfg: PreambleConfig | None = None, chips: np.ndarray | None = None) -> np.ndarray:
    cfg = cfg or PreambleConfig()
    cfg.validate()
    short = zc_sequence(cfg.root_short, cfg.len_short)
    if chips is None:
        chips = cfg.chips()
    parts = [c * short for c in chips]
    parts.append(zc_sequence(cfg.root_long, cfg.len_long))
    p = np.concatenate(parts)
    if len(p) != PREAMBLE_LENGTH:
        raise ConfigLengthError(f"preamble has {len(p)} samples")
    return p / np.sqrt(np.mean(np.abs(p) ** 2))


@dataclass(frozen=True)
class SyncResult:
    detected: bool
    t_offset: int
    cfo_hz: float
    snr_db: float
    peak_metric: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SyncResult":
        return cls(**d)


def _differential(x: np.ndarray, cfg: PreambleConfig, n_pos: int) -> np.ndarray:
    short = zc_sequence(cfg.root_short, cfg.len_short)
    L = cfg.len_short
    c = signal.correlate(x[: n_pos - 1 + cfg.n_short * L], short, mode="valid", method="fft")
    chips = cfg.chips()
    w = chips[:-1] * chips[1:]
    d = np.zeros(n_pos, dtype=np.complex128)
    for k in range(cfg.n_short - 1):
        d += w[k] * np.conj(c[k * L : k * L + n_pos]) * c[(k + 1) * L : (k + 1) * L + n_pos]
    return d


def _phase_slope(z: np.ndarray, block: int = 64) -> float:
    """Least-squares phase slope (rad/sample) of ``z`` using block-summed phasors."""
    nb = len(z) // block
    if nb < 2:
        return float(np.angle(np.vdot(z[:-1], z[1:])))
    sums = z[: nb * block].reshape(nb, block).sum(axis=1)
    phase = np.unwrap(np.angle(sums))
    centres = (np.arange(nb) + 0.5) * block
    weights = np.abs(sums)
    slope, _ = np.polyfit(centres, phase, 1, w=weights)
    return float(slope)


def _verify(x: np.ndarray, start: int, p: np.ndarray, cfo: float, fs: float):
    L = len(p)
    n = np.arange(L)
    y = x[start : start + L] * np.exp(-2j * np.pi * cfo * n / fs)
    corr = np.vdot(p, y)
    ep = float(np.sum(np.abs(p) ** 2))
    ey = float(np.sum(np.abs(y) ** 2))
    proj = abs(corr) ** 2 / ep
    return y, corr, proj, ey


def detect_preamble(
    rec: IQRecord,
    cfg: PreambleConfig | None = None,
    threshold: float = 0.5,
    kappa: float = 20.0,
    search: int | None = None,
    n_candidates: int = 3,
) -> SyncResult:
    """Locate the preamble in ``rec`` and estimate CFO and SNR.

    ``search`` limits the candidate start positions to ``[0, search)``.
    A miss is reported through ``detected=False``, not an exception.
    """
    cfg = cfg or PreambleConfig()
    cfg.validate()
    x = rec.samples
    fs = rec.sample_rate
    P = cfg.length
    if len(x) <= P:
        raise TooShort(f"record of {len(x)} samples cannot hold a {P}-sample preamble")
    n_pos = len(x) - P + 1
    if search is not None:
        n_pos = max(1, min(n_pos, search))
    p = build_preamble(cfg)
    L = cfg.len_short

    d = _differential(x, cfg, n_pos)
    mag = np.abs(d)
    candidates = []
    work = mag.copy()
    for _ in range(n_candidates):
        i = int(np.argmax(work))
        if work[i] <= 0 and candidates:
            break
        candidates.append(i)
        work[max(0, i - L) : i + L + 1] = -1.0

    best = None
    for c0 in candidates:
        coarse = float(np.angle(d[c0])) * fs / (2 * np.pi * L)
        for start in range(max(0, c0 - 2), min(len(x) - P, c0 + 2) + 1):
            y, corr, proj, ey = _verify(x, start, p, coarse, fs)
            if best is None or proj / max(ey, 1e-300) > best[0]:
                best = (proj / max(ey, 1e-300), start, coarse, y)
    _, start, coarse, y = best

    fine = coarse + _phase_slope(y * np.conj(p)) * fs / (2 * np.pi)
    _, corr, proj, ey = _verify(x, start, p, fine, fs)
    residual = max(ey - proj, 0.0)
    if residual <= ey * 1e-15:
        stat = np.inf
        snr_db = SNR_CAP_DB
    else:
        stat = (P - 1) * proj / residual
        snr_db = float(10 * np.log10(max((proj / P) / (residual / (P - 1)), 1e-12)))
        snr_db = min(snr_db, SNR_CAP_DB)
    metric = 1.0 if np.isinf(stat) else float(stat / (stat + kappa))
    return SyncResult(
        detected=bool(metric >= threshold),
        t_offset=int(start),
        cfo_hz=float(fine),
        snr_db=float(snr_db),
        peak_metric=metric,
    )


def estimate_snr(
    rec: IQRecord,
    sync: SyncResult,
    cfg: PreambleConfig | None = None,
    guard: int | None = None,
) -> float:
    """SNR from preamble-region power against the noise floor measured around it.

    The floor is the mean power of up to ``guard`` samples on either side of
    the preamble (default: one preamble length), which the transmitter
    leaves empty.
    """
    if not sync.detected:
        raise RequiresDetection("SNR estimation needs a detected preamble")
    cfg = cfg or PreambleConfig()
    P = cfg.length
    guard = P if guard is None else guard
    x = rec.samples
    a, b = sync.t_offset, sync.t_offset + P
    region = np.abs(x[a:b]) ** 2
    noise = np.concatenate([x[max(0, a - guard) : a], x[b : b + guard]])
    total = float(region.mean())
    if len(noise) == 0:
        raise TooShort("no samples around the preamble to measure the noise floor")
    floor = float(np.mean(np.abs(noise) ** 2))
    sig = total - floor
    if floor <= total * 1e-12:
        return SNR_CAP_DB
    if sig <= 0:
        return float(10 * np.log10(1e-12))
    return float(min(10 * np.log10(sig / floor), SNR_CAP_DB))
