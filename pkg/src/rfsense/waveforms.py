"""Baseband synthesis of LTE-like and WiFi-like OFDM frames.

Frames are generated at baseband (centred on DC), then frequency-shifted and
placed in a record that spans the whole monitored band.  The record is complex
baseband sampled at ``sample_rate == band_width``, so a frame whose centre is
``f_center`` Hz above the band start sits at ``f_center - band_width / 2`` Hz
in the baseband record.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import signal

from .errors import BandExceeded, FrameOutOfSpan, InvalidSpec


class RatClass(str, enum.Enum):
    LTE = "lte"
    WIFI = "wifi"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value: "RatClass | str") -> "RatClass":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidSpec(f"unknown RAT class {value!r}") from None


@dataclass(frozen=True)
class OfdmProfile:
    """OFDM numerology used to mimic one radio access technology."""

    subcarrier_spacing: float
    cp_fraction: float
    preamble_duration: float = 0.0
    preamble_boost: float = 1.0


# New classes are added here (and to RatClass) to extend the generator.
PROFILES: dict[RatClass, OfdmProfile] = {
    # normal cyclic prefix: 144 / 2048 of the useful symbol
    RatClass.LTE: OfdmProfile(subcarrier_spacing=15e3, cp_fraction=144 / 2048),
    RatClass.WIFI: OfdmProfile(
        subcarrier_spacing=312.5e3,
        cp_fraction=0.25,
        preamble_duration=16e-6,
        preamble_boost=2.0,
    ),
}


@dataclass(frozen=True)
class FrameSpec:
    rat: RatClass
    t_start: float
    duration: float
    f_center: float
    bandwidth: float
    power_db: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rat", RatClass.parse(self.rat))

    def validate(self, band_width: float | None = None) -> None:
        if not self.duration > 0:
            raise InvalidSpec(f"frame duration must be positive, got {self.duration}")
        if not self.bandwidth > 0:
            raise InvalidSpec(f"frame bandwidth must be positive, got {self.bandwidth}")
        if self.t_start < 0:
            raise InvalidSpec(f"frame starts before the record: {self.t_start}")
        if band_width is not None:
            lo = self.f_center - self.bandwidth / 2
            hi = self.f_center + self.bandwidth / 2
            tol = 1e-9 * band_width
            if lo < -tol or hi > band_width + tol:
                raise BandExceeded(
                    f"frame occupies [{lo:g}, {hi:g}] Hz outside the band [0, {band_width:g}]"
                )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["rat"] = self.rat.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FrameSpec":
        return cls(**d)


@dataclass(frozen=True)
class TransmissionSchedule:
    band_width: float
    span: float
    frames: tuple[FrameSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def sample_rate(self) -> float:
        return self.band_width

    @property
    def n_samples(self) -> int:
        return int(round(self.span * self.sample_rate))

    def validate(self) -> None:
        if not self.span > 0:
            raise InvalidSpec("schedule span must be positive")
        for f in self.frames:
            f.validate(self.band_width)
            start = int(round(f.t_start * self.sample_rate))
            length = int(round(f.duration * self.sample_rate))
            if start + length > self.n_samples:
                raise FrameOutOfSpan(
                    f"frame [{f.t_start:g}, {f.t_start + f.duration:g}] s exceeds span {self.span:g} s"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "band_width": self.band_width,
            "span": self.span,
            "frames": [f.to_dict() for f in self.frames],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TransmissionSchedule":
        return cls(
            band_width=d["band_width"],
            span=d["span"],
            frames=tuple(FrameSpec.from_dict(f) for f in d["frames"]),
        )

    def digest(self) -> str:
        return content_hash(self.to_dict())


def content_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class IQRecord:
    samples: np.ndarray
    sample_rate: float
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def replace(self, samples: np.ndarray, **meta: Any) -> "IQRecord":
        return IQRecord(samples, self.sample_rate, {**self.meta, **meta})


def _qpsk(rng: np.random.Generator, shape) -> np.ndarray:
    bits = rng.integers(0, 2, size=(2,) + tuple(shape))
    return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / np.sqrt(2)


def _ofdm_symbols(
    rng: np.random.Generator, nfft: int, ncp: int, used: np.ndarray, nsym: int
) -> np.ndarray:
    grid = np.zeros((nsym, nfft), dtype=np.complex128)
    grid[:, used % nfft] = _qpsk(rng, (nsym, len(used)))
    sym = np.fft.ifft(grid, axis=1) * np.sqrt(nfft)
    if ncp:
        sym = np.concatenate([sym[:, -ncp:], sym], axis=1)
    return sym.ravel()


def synth_ofdm_frame(
    rat: RatClass | str,
    spec: FrameSpec,
    sample_rate: float,
    filter_taps: int = 401,
    ramp: float = 4e-6,
) -> IQRecord:
    """Synthesise one frame at baseband.

    The frame fills ``spec.duration`` with back-to-back cyclic-prefixed OFDM
    symbols whose active subcarriers span ``spec.bandwidth``.  For
    sub-band frames a Kaiser low-pass removes the sinc skirts of the edge
    subcarriers so the frame stays inside its nominal band, and both ends
    get a raised-cosine ramp of ``ramp`` seconds so that the switching edges
    do not splatter across the band.  The output is scaled to an RMS amplitude of ``10 ** (power_db / 20)``.
    """
    rat = RatClass.parse(rat)
    if rat not in PROFILES:
        raise InvalidSpec(f"no OFDM profile registered for {rat.value}")
    spec.validate()
    if spec.bandwidth > sample_rate * (1 + 1e-12):
        raise BandExceeded(
            f"bandwidth {spec.bandwidth:g} Hz exceeds sample rate {sample_rate:g} Hz"
        )
    profile = PROFILES[rat]
    n = int(round(spec.duration * sample_rate))
    if n < 1:
        raise InvalidSpec("frame shorter than one sample")

    nfft = max(int(round(sample_rate / profile.subcarrier_spacing)), 4)
    spacing = sample_rate / nfft
    k_max = min(int(np.floor(spec.bandwidth / 2 / spacing + 1e-9)), (nfft - 1) // 2)
    if k_max < 1:
        raise InvalidSpec(
            f"bandwidth {spec.bandwidth:g} Hz narrower than two subcarriers of {rat.value}"
        )
    used = np.concatenate([np.arange(-k_max, 0), np.arange(1, k_max + 1)])
    ncp = int(round(nfft * profile.cp_fraction))

    rng = np.random.default_rng(spec.seed)
    nsym = -(-n // (nfft + ncp))
    x = _ofdm_symbols(rng, nfft, ncp, used, nsym)[:n]

    if profile.preamble_duration > 0:
        # short-training-like burst: every 4th subcarrier, so it repeats every nfft/4
        m = min(int(round(profile.preamble_duration * sample_rate)), n)
        sparse = used[used % 4 == 0]
        if m and len(sparse):
            grid = np.zeros(nfft, dtype=np.complex128)
            grid[sparse % nfft] = _qpsk(rng, (len(sparse),))
            burst = np.fft.ifft(grid) * np.sqrt(nfft)
            burst = np.resize(burst, m)
            burst *= np.sqrt(profile.preamble_boost / np.mean(np.abs(burst) ** 2))
            x[:m] = burst

    if spec.bandwidth < sample_rate * (1 - 1e-9) and filter_taps > 1:
        cutoff = min(spec.bandwidth / 2 + 150e3, 0.999 * sample_rate / 2)
        taps = signal.firwin(filter_taps, cutoff, window=("kaiser", 8.0), fs=sample_rate)
        x = signal.oaconvolve(x, taps, mode="same")

    r = min(int(round(ramp * sample_rate)), n // 2)
    if r > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * (np.arange(r) + 0.5) / r)
        x[:r] *= edge
        x[n - r :] *= edge[::-1]

    rms = np.sqrt(np.mean(np.abs(x) ** 2))
    x *= 10 ** (spec.power_db / 20) / rms
    return IQRecord(
        x, sample_rate, {"rat": rat.value, "seed": spec.seed, "bandwidth": spec.bandwidth}
    )


def render_schedule(sched: TransmissionSchedule) -> IQRecord:
    """Sum every scheduled frame into one record; idle samples stay exactly zero."""
    sched.validate()
    fs = sched.sample_rate
    out = np.zeros(sched.n_samples, dtype=np.complex128)
    for frame in sched.frames:
        rec = synth_ofdm_frame(frame.rat, frame, fs)
        start = int(round(frame.t_start * fs))
        offset = frame.f_center - sched.band_width / 2
        n = np.arange(len(rec))
        out[start : start + len(rec)] += rec.samples * np.exp(2j * np.pi * offset * n / fs)
    return IQRecord(
        out,
        fs,
        {
            "span": sched.span,
            "schedule": sched.to_dict(),
            "schedule_hash": sched.digest(),
            "seeds": [f.seed for f in sched.frames],
            "impairments": [],
        },
    )


def occupied_support(rec: IQRecord) -> tuple[int, int] | None:
    """Half-open index range covering all nonzero samples, or None."""
    nz = np.flatnonzero(rec.samples)
    if len(nz) == 0:
        return None
    return int(nz[0]), int(nz[-1]) + 1


def frames_in(sched: TransmissionSchedule, rats: Iterable[RatClass] | None = None) -> Sequence[FrameSpec]:
    if rats is None:
        return sched.frames
    keep = {RatClass.parse(r) for r in rats}
    return tuple(f for f in sched.frames if f.rat in keep)
