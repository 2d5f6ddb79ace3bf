"""Spectrograms and the pixel <-> (time, frequency) calibration.

Rows are time (row 0 is the earliest), columns are frequency (column 0 is
the band start).  Each row integrates one hop of the record: the
periodograms of the consecutive ``fft_size`` blocks inside the hop are
averaged, so a frame that covers part of a row contributes power in
proportion to the covered fraction.  With the defaults (104-point FFT,
10384-sample hop) a 50 ms record at 20 MS/s gives 97 x 104 pixels of
519.2 us x 192.307 kHz; the last row starts 49.84 ms in and averages only
the blocks left in the record.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import signal

from .errors import TooShort
from .waveforms import IQRecord

DEFAULT_FFT_SIZE = 104
DEFAULT_HOP = 10384
FLOOR_DB = -120.0


@dataclass(frozen=True)
class SpectrogramAxes:
    f1: float
    f2: float
    t1: float
    t2: float
    x_min: int = 0
    x_max: int = 1
    y_min: int = 0
    y_max: int = 1

    def __post_init__(self):
        if not self.f2 > self.f1:
            raise ValueError("f2 must exceed f1")
        if not self.t2 > self.t1:
            raise ValueError("t2 must exceed t1")
        if self.width < 1 or self.height < 1:
            raise ValueError("spectrogram must be at least one pixel in each direction")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def i_f(self) -> float:
        """Frequency span of one pixel column."""
        return (self.f2 - self.f1) / (self.x_max - self.x_min)

    @property
    def i_t(self) -> float:
        """Time span of one pixel row."""
        return (self.t2 - self.t1) / (self.y_max - self.y_min)

    def pixel_centre(self, x: int, y: int) -> tuple[float, float]:
        """(time, frequency) at the centre of pixel column x, row y."""
        t = self.t1 + (y - self.y_min + 0.5) * self.i_t
        f = self.f1 + (x - self.x_min + 0.5) * self.i_f
        return t, f

    def to_pixel(self, t: float, f: float) -> tuple[int, int]:
        """Pixel (x, y) containing the point (t, f)."""
        x = self.x_min + math.floor((f - self.f1) / self.i_f)
        y = self.y_min + math.floor((t - self.t1) / self.i_t)
        return x, y

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SpectrogramAxes":
        keys = ("f1", "f2", "t1", "t2", "x_min", "x_max", "y_min", "y_max")
        return cls(**{k: d[k] for k in keys})


@dataclass
class Spectrogram:
    axes: SpectrogramAxes
    power_db: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.power_db.shape

    def linear(self) -> np.ndarray:
        return 10 ** (self.power_db / 10)


def compute_spectrogram(
    rec: IQRecord,
    fft_size: int = DEFAULT_FFT_SIZE,
    hop: int = DEFAULT_HOP,
    window: str = "hann",
    f_offset: float = 0.0,
) -> Spectrogram:
    """Averaged STFT power in dB, FFT-shifted so column 0 is the band start.

    ``f_offset`` is the frequency assigned to the band start (``f1``); by
    default frequencies are relative to the band start, matching
    ``FrameSpec.f_center``.  The record's start time is ``rec.meta["t0"]``
    (default 0).
    """
    x = rec.samples
    n = len(x)
    if n < fft_size:
        raise TooShort(f"record of {n} samples is shorter than fft_size={fft_size}")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    fs = rec.sample_rate
    rows = (n - fft_size) // hop + 1
    per_row = max(1, hop // fft_size)
    win = signal.get_window(window, fft_size)
    scale = 1.0 / (fft_size * np.sum(win**2))

    power = np.empty((rows, fft_size))
    for r in range(rows):
        start = r * hop
        k = min(per_row, (n - start) // fft_size)
        blocks = x[start : start + k * fft_size].reshape(k, fft_size)
        spec = np.fft.fft(blocks * win, axis=1)
        power[r] = np.mean(np.abs(spec) ** 2, axis=0) * scale
    power = np.fft.fftshift(power, axes=1)
    with np.errstate(divide="ignore"):
        power_db = 10 * np.log10(np.maximum(power, 10 ** (FLOOR_DB / 10)))

    t0 = float(rec.meta.get("t0", 0.0))
    axes = SpectrogramAxes(
        f1=f_offset,
        f2=f_offset + fs,
        t1=t0,
        t2=t0 + rows * hop / fs,
        x_min=0,
        x_max=fft_size,
        y_min=0,
        y_max=rows,
    )
    meta = {
        "fft_size": fft_size,
        "hop": hop,
        "window": window,
        "sample_rate": fs,
        "source": rec.meta.get("schedule_hash"),
    }
    return Spectrogram(axes, power_db, meta)


def to_image(spec: Spectrogram, floor_db: float, ceil_db: float) -> np.ndarray:
    """Map dB values linearly onto 0..255 (8-bit grayscale), clamping outside."""
    if not ceil_db > floor_db:
        raise ValueError("ceil_db must exceed floor_db")
    scaled = (spec.power_db - floor_db) / (ceil_db - floor_db) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def axes_path(prefix: str | os.PathLike) -> Path:
    return Path(str(prefix) + ".axes.json")


def write_axes(path: str | os.PathLike, axes: SpectrogramAxes, **extra: Any) -> None:
    Path(path).write_text(json.dumps({**axes.to_dict(), **extra}, indent=1, sort_keys=True))


def read_axes(path: str | os.PathLike) -> SpectrogramAxes:
    return SpectrogramAxes.from_dict(json.loads(Path(path).read_text()))


def save_spectrogram(
    prefix: str | os.PathLike,
    spec: Spectrogram,
    image: str | None = "png",
    floor_db: float | None = None,
    ceil_db: float | None = None,
) -> dict[str, Path]:
    """Write ``<prefix>.f32`` (row-major float32 dB), ``<prefix>.axes.json`` and an image.

    The image range defaults to [5th percentile, max] of the matrix.
    """
    from PIL import Image

    prefix = Path(prefix)
    out = {}
    matrix = prefix.with_name(prefix.name + ".f32")
    spec.power_db.astype("<f4").tofile(matrix)
    out["matrix"] = matrix
    ax = axes_path(prefix)
    write_axes(ax, spec.axes, shape=list(spec.shape), stft=spec.meta)
    out["axes"] = ax
    if image:
        lo = float(np.percentile(spec.power_db, 5)) if floor_db is None else floor_db
        hi = float(spec.power_db.max()) if ceil_db is None else ceil_db
        if hi <= lo:
            hi = lo + 1.0
        img = prefix.with_name(f"{prefix.name}.{image}")
        Image.fromarray(to_image(spec, lo, hi), mode="L").save(img)
        out["image"] = img
    return out


def load_spectrogram(prefix: str | os.PathLike) -> Spectrogram:
    prefix = Path(prefix)
    info = json.loads(axes_path(prefix).read_text())
    axes = SpectrogramAxes.from_dict(info)
    shape = tuple(info.get("shape", (axes.height, axes.width)))
    data = np.fromfile(prefix.with_name(prefix.name + ".f32"), dtype="<f4").astype(np.float64)
    return Spectrogram(axes, data.reshape(shape), dict(info.get("stft", {})))
