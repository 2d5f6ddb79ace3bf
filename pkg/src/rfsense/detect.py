"""Baseline (non-ML) frame detector and rule-based RAT classifier.

detect = noise floor -> threshold mask -> connected components -> merge ->
peak test -> edge refinement -> classification.  Refinement moves each box edge to the
last row/column whose excess power is at least ``edge_fraction`` of the
box's peak profile, which puts the edge where a frame covers about half a
pixel.
"""

from __future__ import annotations

import operator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np
from scipy import ndimage

from .annotate import BoundingBox, Detection
from .spectro import Spectrogram
from .waveforms import RatClass

_OPS = {">=": operator.ge, ">": operator.gt, "<": operator.lt, "<=": operator.le}
FEATURES = ("fd", "b_w", "flatness", "duty")


@dataclass(frozen=True)
class Rule:
    """``feature op threshold -> label``; confidence is the margin over ``scale``, capped at 1."""

    feature: str
    op: str
    threshold: float
    label: RatClass
    scale: float = 1.0

    def __post_init__(self):
        if self.feature not in FEATURES:
            raise ValueError(f"unknown rule feature {self.feature!r}; choose from {FEATURES}")
        if self.op not in _OPS:
            raise ValueError(f"unknown operator {self.op!r}")
        if not self.scale > 0:
            raise ValueError("rule scale must be positive")
        object.__setattr__(self, "label", RatClass.parse(self.label))

    def confidence(self, features: dict[str, float]) -> float | None:
        value = features[self.feature]
        if not _OPS[self.op](value, self.threshold):
            return None
        return float(min(1.0, abs(value - self.threshold) / self.scale))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["label"] = self.label.value
        return d


# LTE-like frames last several ms; WiFi-like frames stay under ~2 ms in the generator.
DEFAULT_RULES = (
    Rule("fd", ">=", 2.5e-3, RatClass.LTE, scale=2.5e-3),
    Rule("fd", "<", 2.5e-3, RatClass.WIFI, scale=1.5e-3),
)


@dataclass(frozen=True)
class DetectorConfig:
    threshold_db_above_floor: float = 2.0
    # component extents are traced at this level; threshold_db_above_floor
    # only decides which (merged) components are kept, by their peak
    grow_db_above_floor: float = 2.0
    min_box_area: int = 16
    merge_gap: int = 3
    classifier_rules: tuple[Rule, ...] = DEFAULT_RULES
    smooth_cols: int = 3
    refine: bool = True
    edge_fraction: float = 0.5
    # boxes fewer than short_rows tall take partial rows down to short_edge_fraction
    short_rows: int = 4
    short_edge_fraction: float = 0.05

    def __post_init__(self):
        rules = tuple(r if isinstance(r, Rule) else Rule(**r) for r in self.classifier_rules)
        object.__setattr__(self, "classifier_rules", rules)
        if not self.threshold_db_above_floor > 0:
            raise ValueError("threshold_db_above_floor must be positive")
        if not self.grow_db_above_floor > 0:
            raise ValueError("grow_db_above_floor must be positive")
        if self.min_box_area < 1:
            raise ValueError("min_box_area must be >= 1")
        if self.merge_gap < 0:
            raise ValueError("merge_gap must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["classifier_rules"] = [r.to_dict() for r in self.classifier_rules]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DetectorConfig":
        d = dict(d)
        d.pop("kind", None)
        if "classifier_rules" in d:
            d["classifier_rules"] = tuple(Rule(**r) for r in d["classifier_rules"])
        return cls(**d)


def estimate_noise_floor(spec: Spectrogram) -> float:
    """Median of the lowest quartile of pixel values (dB)."""
    flat = np.sort(np.asarray(spec.power_db, dtype=float).ravel())
    if flat.size == 0:
        raise ValueError("empty spectrogram")
    k = max(1, flat.size // 4)
    return float(np.median(flat[:k]))


def _smoothed(spec: Spectrogram, cfg: DetectorConfig) -> np.ndarray:
    lin = spec.linear()
    if cfg.smooth_cols > 1:
        lin = ndimage.uniform_filter1d(lin, size=cfg.smooth_cols, axis=1, mode="nearest")
    return lin


def _mask(spec: Spectrogram, cfg: DetectorConfig, floor_db: float) -> np.ndarray:
    return _smoothed(spec, cfg) >= 10 ** ((floor_db + cfg.grow_db_above_floor) / 10)


def _gap(a: tuple, b: tuple) -> tuple[int, int]:
    gx = max(0, b[0] - a[1], a[0] - b[1])
    gy = max(0, b[2] - a[3], a[2] - b[3])
    return gx, gy


def _merge(rects: list[tuple], merge_gap: int) -> list[tuple]:
    """Union boxes separated by fewer than ``merge_gap`` empty pixels; overlapping boxes always merge.

    Rects are ``(x0, x1, y0, y1, peak)``; a union keeps the larger peak.
    """
    limit = max(merge_gap, 1)
    rects = list(rects)
    changed = True
    while changed:
        changed = False
        out: list[tuple] = []
        for r in rects:
            for i, o in enumerate(out):
                gx, gy = _gap(r, o)
                if gx < limit and gy < limit:
                    out[i] = (min(r[0], o[0]), max(r[1], o[1]), min(r[2], o[2]), max(r[3], o[3]), max(r[4], o[4]))
                    changed = True
                    break
            else:
                out.append(r)
        rects = out
    return rects


def segment(
    spec: Spectrogram, cfg: DetectorConfig | None = None, floor_db: float | None = None
) -> list[BoundingBox]:
    """Tight boxes around 4-connected components of the thresholded image (class unset).

    Components are traced at ``grow_db_above_floor``; those fewer than
    ``merge_gap`` empty pixels apart in both directions are merged, and a
    merged group is kept when its area reaches ``min_box_area`` and its peak
    reaches ``threshold_db_above_floor``.  Since the groups themselves do
    not depend on the threshold, raising it can only remove boxes.
    """
    cfg = cfg or DetectorConfig()
    if floor_db is None:
        floor_db = estimate_noise_floor(spec)
    lin = _smoothed(spec, cfg)
    labels, n = ndimage.label(lin >= 10 ** ((floor_db + cfg.grow_db_above_floor) / 10))
    peaks = ndimage.maximum(lin, labels, np.arange(1, n + 1)) if n else []
    rects = []
    for sl, peak in zip(ndimage.find_objects(labels), peaks):
        if sl is None:
            continue
        rows, cols = sl
        rects.append((cols.start, cols.stop, rows.start, rows.stop, float(peak)))
    rects = _merge(rects, cfg.merge_gap)
    seed = 10 ** ((floor_db + cfg.threshold_db_above_floor) / 10)
    rects = [r for r in rects if (r[1] - r[0]) * (r[3] - r[2]) >= cfg.min_box_area and r[4] >= seed]
    rects.sort(key=lambda r: (r[2], r[0], r[3], r[1]))
    ax = spec.axes
    return [BoundingBox(ax.x_min + r[0], ax.x_min + r[1], ax.y_min + r[2], ax.y_min + r[3]) for r in rects]


def _noise_level(spec: Spectrogram, cfg: DetectorConfig, floor_db: float) -> float:
    mask = ndimage.binary_dilation(_mask(spec, cfg, floor_db), iterations=2)
    lin = spec.linear()
    if (~mask).any():
        return float(lin[~mask].mean())
    return 10 ** (floor_db / 10)


def _run_around_peak(profile: np.ndarray, fraction: float, bridge: int = 3) -> tuple[int, int]:
    """Span of samples at or above ``fraction`` of the plateau around the peak.

    The plateau is the median of the samples above half the peak, so a
    single noise spike does not raise the bar.  Dips of up to ``bridge``
    samples inside the span are crossed (DC nulls, fading notches).
    """
    peak = int(np.argmax(profile))
    top = profile[profile >= 0.5 * profile[peak]]
    keep = profile >= fraction * float(np.median(top))
    keep[peak] = True

    def walk(i: int, step: int) -> int:
        # last kept index reachable from i moving by step
        last, gap = i, 0
        j = i + step
        while 0 <= j < len(profile):
            if keep[j]:
                last, gap = j, 0
            else:
                gap += 1
                if gap > bridge:
                    break
            j += step
        return last

    return walk(peak, -1), walk(peak, 1) + 1


def refine_box(
    spec: Spectrogram,
    box: BoundingBox,
    noise_lin: float,
    edge_fraction: float = 0.5,
    margin: int = 2,
    short_rows: int = 0,
    short_edge_fraction: float = 0.05,
) -> BoundingBox:
    """Snap box edges to the half-occupancy points of its row and column profiles.

    Boxes that come out shorter than ``short_rows`` are re-snapped in time
    at ``short_edge_fraction`` so that partially covered rows are kept,
    as the outward-rounded ground truth does.  On long frames that extra
    row is a small relative error; on a two-row frame it halves the IoU.
    """
    ax = spec.axes
    H, W = spec.shape
    r0, r1 = box.y_min - ax.y_min, box.y_max - ax.y_min
    c0, c1 = box.x_min - ax.x_min, box.x_max - ax.x_min
    er0, er1 = max(0, r0 - margin), min(H, r1 + margin)
    ec0, ec1 = max(0, c0 - margin), min(W, c1 + margin)
    excess = spec.linear()[er0:er1, ec0:ec1] - noise_lin
    cols = excess[r0 - er0 : r1 - er0, :].mean(axis=0)
    rows = excess[:, c0 - ec0 : c1 - ec0].mean(axis=1)
    if cols.max() <= 0 or rows.max() <= 0:
        return box
    x0, x1 = _run_around_peak(cols, edge_fraction)
    y0, y1 = _run_around_peak(rows, edge_fraction)
    if y1 - y0 < short_rows:
        y0, y1 = _run_around_peak(rows, short_edge_fraction, bridge=0)
    return BoundingBox(
        ax.x_min + ec0 + x0, ax.x_min + ec0 + x1, ax.y_min + er0 + y0, ax.y_min + er0 + y1, box.label
    )


def box_features(spec: Spectrogram, box: BoundingBox, noise_lin: float | None = None) -> dict[str, float]:
    ax = spec.axes
    r0, r1 = box.y_min - ax.y_min, box.y_max - ax.y_min
    c0, c1 = box.x_min - ax.x_min, box.x_max - ax.x_min
    patch = spec.linear()[r0:r1, c0:c1]
    if noise_lin is not None:
        patch = np.maximum(patch - noise_lin, 1e-30)
    cols = patch.mean(axis=0)
    rows = patch.mean(axis=1)
    flatness = float(np.exp(np.mean(np.log(cols))) / cols.mean())
    duty = float(np.mean(rows >= 0.5 * rows.max()))
    return {
        "fd": box.height * ax.i_t,
        "b_w": box.width * ax.i_f,
        "flatness": flatness,
        "duty": duty,
    }


def classify(
    spec: Spectrogram,
    box: BoundingBox,
    rules: Sequence[Rule] = DEFAULT_RULES,
    noise_lin: float | None = None,
) -> tuple[RatClass, float]:
    """First matching rule wins; no match gives ``(RatClass.UNKNOWN, 0.0)``."""
    feats = box_features(spec, box, noise_lin)
    for rule in rules:
        conf = rule.confidence(feats)
        if conf is not None:
            return rule.label, conf
    return RatClass.UNKNOWN, 0.0


def detect(spec: Spectrogram, cfg: DetectorConfig | None = None) -> list[Detection]:
    cfg = cfg or DetectorConfig()
    floor_db = estimate_noise_floor(spec)
    boxes = segment(spec, cfg, floor_db)
    if not boxes:
        return []
    noise_lin = _noise_level(spec, cfg, floor_db)
    out = []
    for box in boxes:
        core = box
        if cfg.refine:
            # classify on half-occupancy edges (unbiased duration), report the
            # box with partial rows kept for short frames
            core = refine_box(spec, box, noise_lin, cfg.edge_fraction)
            box = refine_box(
                spec, box, noise_lin, cfg.edge_fraction,
                short_rows=cfg.short_rows, short_edge_fraction=cfg.short_edge_fraction,
            )
        label, conf = classify(spec, core, cfg.classifier_rules, noise_lin)
        out.append(Detection(box.with_label(label), conf))
    out.sort(key=lambda d: (d.box.y_min, d.box.x_min, d.box.y_max, d.box.x_max))
    return out


def detect_batch(
    specs: Sequence[Spectrogram], cfg: DetectorConfig | None = None, workers: int = 1
) -> list[list[Detection]]:
    """Detect on many spectrograms; results keep input order for any worker count."""
    cfg = cfg or DetectorConfig()
    if workers <= 1:
        return [detect(s, cfg) for s in specs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(detect, specs, [cfg] * len(specs)))
