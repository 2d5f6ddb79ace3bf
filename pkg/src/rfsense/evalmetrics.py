"""Detection matching, detection rate / precision, VOC-style AP and boxplot stats."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .annotate import BoundingBox, Detection
from .waveforms import RatClass

DEFAULT_IOU = 0.5


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    unmatched_gt: list[int]
    unmatched_det: list[int]


def _by_confidence(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def match(
    gt: Sequence[BoundingBox],
    det: Sequence[Detection],
    iou_threshold: float = DEFAULT_IOU,
) -> MatchResult:
    """Greedy one-to-one assignment in descending confidence order.

    Each detection claims the unclaimed ground-truth box of highest IoU,
    provided that IoU exceeds ``iou_threshold`` (strictly, as in the VOC
    devkit).  Ties in confidence keep input order; ties in IoU go to the
    lower ground-truth index.
    Matching ignores class labels; classification is scored separately.
    """
    claimed = [False] * len(gt)
    pairs = []
    unmatched_det = []
    for d in _by_confidence(det):
        best, best_iou = -1, -1.0
        for g, box in enumerate(gt):
            if claimed[g]:
                continue
            v = iou(det[d].box, box)
            if v > iou_threshold and v > best_iou:
                best, best_iou = g, v
        if best < 0:
            unmatched_det.append(d)
        else:
            claimed[best] = True
            pairs.append((best, d, best_iou))
    unmatched_gt = [g for g in range(len(gt)) if not claimed[g]]
    return MatchResult(pairs, unmatched_gt, sorted(unmatched_det))


@dataclass
class Counts:
    """Per-image tallies that add up across a dataset."""

    n_gt: int = 0
    n_det: int = 0
    matched: int = 0
    correct: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(
            self.n_gt + other.n_gt,
            self.n_det + other.n_det,
            self.matched + other.matched,
            self.correct + other.correct,
        )

    @property
    def detection_rate(self) -> float | None:
        return self.matched / self.n_gt if self.n_gt else None

    @property
    def precision(self) -> float | None:
        return self.correct / self.matched if self.matched else None


def count_matches(
    m: MatchResult, gt: Sequence[BoundingBox], det: Sequence[Detection]
) -> Counts:
    correct = sum(1 for g, d, _ in m.pairs if det[d].box.label == gt[g].label)
    return Counts(len(gt), len(det), len(m.pairs), correct)


def detection_and_precision(
    m: MatchResult, gt: Sequence[BoundingBox], det: Sequence[Detection]
) -> tuple[float | None, float | None]:
    """(matched GT / all GT, correctly classified / matched detections)."""
    c = count_matches(m, gt, det)
    return c.detection_rate, c.precision


def average_precision(
    detections: Iterable[tuple[str, Detection]],
    ground_truth: Mapping[str, Sequence[BoundingBox]],
    label: RatClass | str,
    iou_threshold: float = DEFAULT_IOU,
) -> float | None:
    """All-points interpolated AP for one class (None when the class has no GT)."""
    label = RatClass.parse(label)
    gts = {img: [b for b in boxes if b.label == label] for img, boxes in ground_truth.items()}
    npos = sum(len(v) for v in gts.values())
    if npos == 0:
        return None
    dets = [(img, d) for img, d in detections if d.box.label == label]
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1].confidence)
    claimed = {img: [False] * len(v) for img, v in gts.items()}
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        img, d = dets[i]
        best, best_iou = -1, -1.0
        for g, box in enumerate(gts.get(img, [])):
            v = iou(d.box, box)
            if v > best_iou:
                best, best_iou = g, v
        if best >= 0 and best_iou > iou_threshold and not claimed[img][best]:
            claimed[img][best] = True
            tp[rank] = 1
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    recall = ctp / npos
    precision = ctp / np.maximum(ctp + cfp, np.finfo(float).eps)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(per_class: Mapping[Any, float | None]) -> float | None:
    vals = [v for v in per_class.values() if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass(frozen=True)
class BoxStats:
    n: int
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    mean: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def deviation_stats(sample: Sequence[float]) -> BoxStats | None:
    """Median, quartiles (linear interpolation) and Tukey 1.5 IQR whiskers."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        return None
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo = x[x >= q1 - 1.5 * iqr].min()
    hi = x[x <= q3 + 1.5 * iqr].max()
    return BoxStats(int(x.size), float(med), float(q1), float(q3), float(lo), float(hi), float(x.mean()))


@dataclass
class EvalReport:
    detection_rate: float | None
    precision: float | None
    ap: dict[str, float | None]
    map: float | None
    deviation: dict[str, dict[str, float] | None] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    iou_threshold: float = DEFAULT_IOU

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def evaluate(
    ground_truth: Mapping[str, Sequence[BoundingBox]],
    predictions: Mapping[str, Sequence[Detection]],
    iou_threshold: float = DEFAULT_IOU,
    deviations: Mapping[str, Sequence[float]] | None = None,
) -> EvalReport:
    """Dataset-level report; images missing from ``predictions`` count as empty."""
    total = Counts()
    for img, gt in ground_truth.items():
        det = list(predictions.get(img, []))
        total = total + count_matches(match(gt, det, iou_threshold), gt, det)
    for img, det in predictions.items():
        if img not in ground_truth:
            total = total + Counts(n_det=len(det))
    flat = [(img, d) for img, ds in predictions.items() for d in ds]
    labels = sorted({b.label for boxes in ground_truth.values() for b in boxes}, key=lambda r: r.value)
    ap = {r.value: average_precision(flat, ground_truth, r, iou_threshold) for r in labels}
    dev = {}
    for name, sample in (deviations or {}).items():
        s = deviation_stats(sample)
        dev[name] = s.to_dict() if s else None
    return EvalReport(
        detection_rate=total.detection_rate,
        precision=total.precision,
        ap=ap,
        map=mean_ap(ap),
        deviation=dev,
        counts=asdict(total),
        iou_threshold=iou_threshold,
    )
