"""Loopback channel impairments applied to IQ records.

Every operation returns a new record and appends a description of itself
to ``meta["impairments"]`` so the full chain survives serialisation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Sequence, Union

import numpy as np

from .errors import CannotCalibrateSnr, InvalidTaps
from .waveforms import IQRecord


def _log(rec: IQRecord, samples: np.ndarray, entry: dict[str, Any]) -> IQRecord:
    chain = list(rec.meta.get("impairments", []))
    chain.append(entry)
    return rec.replace(samples, impairments=chain)


def signal_power(samples: np.ndarray) -> float:
    """Mean power over signal-occupied samples (``|x| > 0``)."""
    p = np.abs(samples) ** 2
    occupied = p > 0
    if not occupied.any():
        return 0.0
    return float(p[occupied].mean())


def complex_noise(n: int, power: float, seed: int) -> np.ndarray:
    """Circular Gaussian noise rescaled to exactly ``power`` over the n samples."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return w * np.sqrt(power / np.mean(np.abs(w) ** 2))


def apply_awgn(
    rec: IQRecord,
    target_snr_db: float | None,
    seed: int,
    reference_power_db: float | None = None,
) -> IQRecord:
    """Add white noise across the whole record at a calibrated SNR.

    The noise power is set against the mean power of the signal-occupied
    samples, or against ``reference_power_db`` when given (used when frames
    of different power share one record).  ``None`` or ``inf`` is a no-op.
    """
    if target_snr_db is None or np.isinf(target_snr_db):
        return rec
    if reference_power_db is None:
        ps = signal_power(rec.samples)
        if ps == 0:
            raise CannotCalibrateSnr("record is all zeros; nothing to calibrate against")
    else:
        ps = 10 ** (reference_power_db / 10)
    noise_power = ps / 10 ** (target_snr_db / 10)
    noisy = rec.samples + complex_noise(len(rec), noise_power, seed)
    return _log(
        rec,
        noisy,
        {
            "op": "awgn",
            "target_snr_db": float(target_snr_db),
            "seed": int(seed),
            "reference_power_db": reference_power_db,
            "noise_power": noise_power,
        },
    )


def measure_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    """Empirical SNR in dB: occupied-sample signal power over record noise power."""
    noise = noisy - clean
    return float(10 * np.log10(signal_power(clean) / np.mean(np.abs(noise) ** 2)))


def apply_cfo(rec: IQRecord, offset_hz: float) -> IQRecord:
    if not abs(offset_hz) < rec.sample_rate / 2:
        raise ValueError(f"|CFO| {offset_hz:g} Hz must be below fs/2")
    n = np.arange(len(rec))
    rotated = rec.samples * np.exp(2j * np.pi * offset_hz * n / rec.sample_rate)
    return _log(rec, rotated, {"op": "cfo", "offset_hz": float(offset_hz)})


def _convolve(rec: IQRecord, taps: Sequence[complex]) -> np.ndarray:
    taps = np.asarray(taps)
    if taps.size == 0:
        raise InvalidTaps("tap list is empty")
    return np.convolve(rec.samples, taps)[: len(rec)]


def apply_multipath(rec: IQRecord, taps: Sequence[complex]) -> IQRecord:
    out = _convolve(rec, np.asarray(taps, dtype=np.complex128))
    return _log(rec, out, {"op": "multipath", "taps": [[t.real, t.imag] for t in np.asarray(taps, complex)]})


def apply_filter(rec: IQRecord, taps: Sequence[float]) -> IQRecord:
    out = _convolve(rec, np.asarray(taps, dtype=np.float64))
    return _log(rec, out, {"op": "filter", "taps": [float(t) for t in taps]})


def apply_gain(rec: IQRecord, db: float) -> IQRecord:
    return _log(rec, rec.samples * 10 ** (db / 20), {"op": "gain", "db": float(db)})


@dataclass(frozen=True)
class AwgnSnr:
    target_snr_db: float | None
    reference_power_db: float | None = None


@dataclass(frozen=True)
class Cfo:
    offset_hz: float


@dataclass(frozen=True)
class Multipath:
    taps: tuple[complex, ...]


@dataclass(frozen=True)
class Gain:
    db: float


@dataclass(frozen=True)
class ShapeFilter:
    taps: tuple[float, ...]


Impairment = Union[AwgnSnr, Cfo, Multipath, Gain, ShapeFilter]

_KINDS = {"awgn": AwgnSnr, "cfo": Cfo, "multipath": Multipath, "gain": Gain, "filter": ShapeFilter}
_NAMES = {v: k for k, v in _KINDS.items()}


@dataclass(frozen=True)
class ImpairmentChain:
    steps: tuple[Impairment, ...] = ()
    noise_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def apply(self, rec: IQRecord) -> IQRecord:
        awgn_count = 0
        for step in self.steps:
            if isinstance(step, AwgnSnr):
                # distinct noise per AWGN stage, still a pure function of noise_seed
                seed = self.noise_seed + 7919 * awgn_count
                awgn_count += 1
                rec = apply_awgn(rec, step.target_snr_db, seed, step.reference_power_db)
            elif isinstance(step, Cfo):
                rec = apply_cfo(rec, step.offset_hz)
            elif isinstance(step, Multipath):
                rec = apply_multipath(rec, step.taps)
            elif isinstance(step, Gain):
                rec = apply_gain(rec, step.db)
            elif isinstance(step, ShapeFilter):
                rec = apply_filter(rec, step.taps)
            else:
                raise TypeError(f"unknown impairment {step!r}")
        return rec

    def with_seed(self, noise_seed: int) -> "ImpairmentChain":
        return ImpairmentChain(self.steps, noise_seed)

    def to_dict(self) -> dict[str, Any]:
        steps = []
        for s in self.steps:
            d = {"op": _NAMES[type(s)], **asdict(s)}
            if isinstance(s, Multipath):
                d["taps"] = [[complex(t).real, complex(t).imag] for t in s.taps]
            elif isinstance(s, ShapeFilter):
                d["taps"] = [float(t) for t in s.taps]
            steps.append(d)
        return {"steps": steps, "noise_seed": self.noise_seed}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ImpairmentChain":
        steps = []
        for s in d.get("steps", []):
            s = dict(s)
            kind = _KINDS[s.pop("op")]
            if kind is Multipath:
                s["taps"] = tuple(complex(re, im) for re, im in s["taps"])
            elif kind is ShapeFilter:
                s["taps"] = tuple(s["taps"])
            steps.append(kind(**s))
        return cls(tuple(steps), int(d.get("noise_seed", 0)))
