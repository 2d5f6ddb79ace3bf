"""Physical transmission features from pixel boxes.

Per box, with ``I_f = (f2 - f1) / (X_max - X_min)`` and
``I_t = (t2 - t1) / (Y_max - Y_min)``::

    b_w = (x_max - x_min) * I_f
    f_c = f1 + I_f * x_min + b_w / 2
    FD  = (y_max - y_min) * I_t

Per spectrogram, from the frame count and the mean frame duration::

    CWT = (t2 - t1) - count * mean_FD
    FI  = CWT / count

Pixel indices in the formulas are taken relative to ``X_min`` / ``Y_min``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .annotate import BoundingBox
from .errors import DegenerateBox, InvalidSpec
from .spectro import SpectrogramAxes
from .waveforms import FrameSpec


@dataclass(frozen=True)
class ExtractedFeatures:
    b_w: float
    f_c: float
    fd: float
    cwt: float | None = None
    fi: float | None = None


@dataclass(frozen=True)
class FrameSetStats:
    frame_count: int
    mean_fd: float


class SetFeatures(NamedTuple):
    stats: FrameSetStats
    cwt: float
    fi: float | None
    clamped: bool


def extract_box_features(box: BoundingBox, axes: SpectrogramAxes) -> ExtractedFeatures:
    if box.x_max <= box.x_min or box.y_max <= box.y_min:
        raise DegenerateBox(f"box {box.as_tuple()} has zero extent")
    if not box.within(axes):
        raise InvalidSpec(f"box {box.as_tuple()} lies outside the spectrogram")
    i_f, i_t = axes.i_f, axes.i_t
    b_w = (box.x_max - box.x_min) * i_f
    f_c = axes.f1 + i_f * (box.x_min - axes.x_min) + b_w / 2
    fd = (box.y_max - box.y_min) * i_t
    return ExtractedFeatures(b_w=b_w, f_c=f_c, fd=fd)


def set_features_from_durations(durations: Sequence[float], span: float) -> SetFeatures:
    count = len(durations)
    mean_fd = sum(durations) / count if count else 0.0
    cwt = span - count * mean_fd
    clamped = False
    if cwt < 0:
        cwt, clamped = 0.0, True
    fi = cwt / count if count else None
    return SetFeatures(FrameSetStats(count, mean_fd), cwt, fi, clamped)


def extract_set_features(boxes: Sequence[BoundingBox], axes: SpectrogramAxes) -> SetFeatures:
    """Channel-without-transmission time and mean inter-frame time for one spectrogram.

    Overlapping boxes can push CWT below zero; it is then clamped to 0 and
    ``clamped`` is set.
    """
    fds = [extract_box_features(b, axes).fd for b in boxes]
    return set_features_from_durations(fds, axes.t2 - axes.t1)


def truth_features(frame: FrameSpec) -> ExtractedFeatures:
    return ExtractedFeatures(b_w=frame.bandwidth, f_c=frame.f_center, fd=frame.duration)


def truth_set_features(
    frames: Sequence[FrameSpec], axes: SpectrogramAxes, t_offset: float = 0.0
) -> SetFeatures:
    """Reference CWT/FI from scheduled frames, clipped to the spectrogram's time span."""
    fds = []
    for f in frames:
        a = max(f.t_start + t_offset, axes.t1)
        b = min(f.t_start + f.duration + t_offset, axes.t2)
        if b > a:
            fds.append(b - a)
    return set_features_from_durations(fds, axes.t2 - axes.t1)


@dataclass(frozen=True)
class FeatureDeviation:
    percent: dict[str, float]
    absolute: tuple[str, ...] = ()


def feature_deviation(
    extracted: ExtractedFeatures,
    truth: ExtractedFeatures,
    band_width: float,
) -> FeatureDeviation:
    """Percentage deviation per feature.

    ``f_c`` is measured against the band width; the others against their
    true value.  A zero true value yields the absolute error instead, and the
    feature is listed in ``absolute``.
    """
    out: dict[str, float] = {}
    absolute = []
    pairs = {
        "b_w": (extracted.b_w, truth.b_w),
        "f_c": (extracted.f_c, truth.f_c),
        "fd": (extracted.fd, truth.fd),
        "fi": (extracted.fi, truth.fi),
    }
    for name, (got, want) in pairs.items():
        if got is None or want is None:
            continue
        err = abs(got - want)
        ref = band_width if name == "f_c" else abs(want)
        if ref == 0:
            out[name] = err
            absolute.append(name)
        else:
            out[name] = err / ref * 100.0
    return FeatureDeviation(out, tuple(absolute))
