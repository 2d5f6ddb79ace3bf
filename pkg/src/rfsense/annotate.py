"""Ground-truth boxes, Pascal-VOC XML and the JSONL predictions format.

Internally boxes are 0-based and half-open: a box covers columns
``x_min .. x_max - 1`` and rows ``y_min .. y_max - 1``.  VOC files use
1-based inclusive pixel coordinates; the converters below own that shift.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import xml.etree.ElementTree as ET
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import InvalidSpec, ParseError
from .spectro import SpectrogramAxes
from .sync import SyncResult
from .waveforms import RatClass, TransmissionSchedule

log = logging.getLogger(__name__)

_EPS = 1e-9


@dataclass(frozen=True)
class BoundingBox:
    x_min: int
    x_max: int
    y_min: int
    y_max: int
    label: RatClass = RatClass.UNKNOWN

    def __post_init__(self):
        object.__setattr__(self, "label", RatClass.parse(self.label))
        for name in ("x_min", "x_max", "y_min", "y_max"):
            v = getattr(self, name)
            if int(v) != v:
                raise InvalidSpec(f"{name} must be an integer pixel index, got {v}")
            object.__setattr__(self, name, int(v))
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise InvalidSpec(f"degenerate box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def with_label(self, label: RatClass | str) -> "BoundingBox":
        return BoundingBox(self.x_min, self.x_max, self.y_min, self.y_max, label)

    def within(self, axes: SpectrogramAxes) -> bool:
        return (
            axes.x_min <= self.x_min
            and self.x_max <= axes.x_max
            and axes.y_min <= self.y_min
            and self.y_max <= axes.y_max
        )


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float = 1.0

    def __post_init__(self):
        c = float(self.confidence)
        if not (0.0 <= c <= 1.0):
            raise InvalidSpec(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "confidence", c)


def _floor(v: float) -> int:
    return math.floor(v + _EPS)


def _ceil(v: float) -> int:
    return math.ceil(v - _EPS)


def sync_time(sync: SyncResult | None, sample_rate: float, payload_offset: int = 0) -> float:
    """Receive-timeline time of the payload start implied by a sync result."""
    if sync is None:
        return 0.0
    if not sync.detected:
        raise InvalidSpec("cannot align labels with an undetected preamble")
    return (sync.t_offset + payload_offset) / sample_rate


def ground_truth_pairs(
    sched: TransmissionSchedule,
    axes: SpectrogramAxes,
    sync: SyncResult | None = None,
    payload_offset: int = 0,
) -> list[tuple[int, BoundingBox]]:
    """Like ``ground_truth_boxes`` but each box comes with its frame's schedule index."""
    t_sync = sync_time(sync, sched.sample_rate, payload_offset)
    out = []
    dropped = 0
    for k, f in enumerate(sched.frames):
        x0 = axes.x_min + _floor((f.f_center - f.bandwidth / 2 - axes.f1) / axes.i_f)
        x1 = axes.x_min + _ceil((f.f_center + f.bandwidth / 2 - axes.f1) / axes.i_f)
        y0 = axes.y_min + _floor((f.t_start + t_sync - axes.t1) / axes.i_t)
        y1 = axes.y_min + _ceil((f.t_start + f.duration + t_sync - axes.t1) / axes.i_t)
        x0, x1 = max(x0, axes.x_min), min(x1, axes.x_max)
        y0, y1 = max(y0, axes.y_min), min(y1, axes.y_max)
        if x1 <= x0 or y1 <= y0:
            dropped += 1
            continue
        out.append((k, BoundingBox(x0, x1, y0, y1, f.rat)))
    if dropped:
        log.warning("dropped %d frame(s) outside the spectrogram axes", dropped)
    return out


def ground_truth_boxes(
    sched: TransmissionSchedule,
    axes: SpectrogramAxes,
    sync: SyncResult | None = None,
    payload_offset: int = 0,
) -> list[BoundingBox]:
    """Map every scheduled frame onto an outward-rounded pixel rectangle.

    ``sync`` places the payload on the receive timeline (``t_offset +
    payload_offset`` samples); ``None`` means loopback without delay.
    Frames that fall completely outside the axes are dropped and counted in
    a warning.
    """
    return [box for _, box in ground_truth_pairs(sched, axes, sync, payload_offset)]


def export_voc(
    image: str,
    boxes: Sequence[BoundingBox],
    axes: SpectrogramAxes | None = None,
    extra: dict[str, Any] | None = None,
) -> str:
    """Pascal-VOC annotation document for one spectrogram image.

    ``extra`` entries are written as children of ``<source>`` (e.g. the SNR
    a sweep was generated at).
    """
    root = ET.Element("annotation")
    ET.SubElement(root, "folder").text = str(Path(image).parent) if Path(image).parent.name else ""
    ET.SubElement(root, "filename").text = Path(image).name
    source = ET.SubElement(root, "source")
    ET.SubElement(source, "database").text = "rfsense"
    for k, v in (extra or {}).items():
        ET.SubElement(source, k).text = str(v)
    if axes is not None:
        size = ET.SubElement(root, "size")
        ET.SubElement(size, "width").text = str(axes.width)
        ET.SubElement(size, "height").text = str(axes.height)
        ET.SubElement(size, "depth").text = "1"
    ET.SubElement(root, "segmented").text = "0"
    for b in boxes:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = b.label.value
        ET.SubElement(obj, "pose").text = "Unspecified"
        ET.SubElement(obj, "truncated").text = "0"
        ET.SubElement(obj, "difficult").text = "0"
        bb = ET.SubElement(obj, "bndbox")
        ET.SubElement(bb, "xmin").text = str(b.x_min + 1)
        ET.SubElement(bb, "ymin").text = str(b.y_min + 1)
        ET.SubElement(bb, "xmax").text = str(b.x_max)
        ET.SubElement(bb, "ymax").text = str(b.y_max)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


@dataclass
class VocAnnotation:
    filename: str
    boxes: list[BoundingBox]
    width: int | None = None
    height: int | None = None
    source: dict[str, str] = field(default_factory=dict)


def _child_int(node: ET.Element, tag: str, doc: str) -> int:
    child = node.find(tag)
    if child is None or child.text is None:
        raise ParseError(f"missing <{tag}> in {doc}")
    try:
        return int(float(child.text.strip()))
    except ValueError:
        raise ParseError(f"<{tag}> is not a number: {child.text!r}") from None


def parse_voc(text: str) -> VocAnnotation:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else None
        raise ParseError(f"malformed XML: {exc}", line=line) from None
    if root.tag != "annotation":
        raise ParseError(f"root element is <{root.tag}>, expected <annotation>", line=1)
    boxes = []
    for obj in root.findall("object"):
        name = obj.findtext("name")
        bb = obj.find("bndbox")
        if name is None or bb is None:
            raise ParseError("object without <name> or <bndbox>")
        try:
            label = RatClass.parse(name.strip())
            box = BoundingBox(
                _child_int(bb, "xmin", "bndbox") - 1,
                _child_int(bb, "xmax", "bndbox"),
                _child_int(bb, "ymin", "bndbox") - 1,
                _child_int(bb, "ymax", "bndbox"),
                label,
            )
        except InvalidSpec as exc:
            raise ParseError(str(exc)) from None
        boxes.append(box)
    size = root.find("size")
    width = height = None
    if size is not None:
        width = _child_int(size, "width", "size")
        height = _child_int(size, "height", "size")
    source = {}
    src = root.find("source")
    if src is not None:
        source = {c.tag: (c.text or "") for c in src}
    return VocAnnotation(root.findtext("filename") or "", boxes, width, height, source)


def import_voc(text: str) -> list[BoundingBox]:
    return parse_voc(text).boxes


@dataclass(frozen=True)
class RejectedRecord:
    line: int
    reason: str
    raw: str


_PRED_KEYS = ("image", "class", "confidence", "x_min", "x_max", "y_min", "y_max")


def prediction_line(image: str, det: Detection) -> str:
    b = det.box
    return json.dumps(
        {
            "image": image,
            "class": b.label.value,
            "confidence": det.confidence,
            "x_min": b.x_min,
            "x_max": b.x_max,
            "y_min": b.y_min,
            "y_max": b.y_max,
        }
    )


def export_predictions(path: str | os.PathLike, items: Iterable[tuple[str, Detection]]) -> None:
    with open(path, "w") as fh:
        for image, det in items:
            fh.write(prediction_line(image, det) + "\n")


def parse_predictions(
    lines: Iterable[str], sizes: dict[str, tuple[int, int]] | None = None
) -> tuple["OrderedDict[str, list[Detection]]", list[RejectedRecord]]:
    """Validate JSONL prediction records, grouping detections by image id.

    ``sizes`` optionally maps image id to (width, height) for bounds checks.
    Bad records are collected, not raised.
    """
    grouped: OrderedDict[str, list[Detection]] = OrderedDict()
    rejected = []
    for i, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            if not isinstance(rec, dict):
                raise ValueError("record is not an object")
            missing = [k for k in _PRED_KEYS if k not in rec]
            if missing:
                raise ValueError(f"missing fields {missing}")
            coords = [rec[k] for k in ("x_min", "x_max", "y_min", "y_max")]
            if any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in coords):
                raise ValueError("coordinates must be numbers")
            if any(c < 0 for c in coords):
                raise ValueError("negative coordinate")
            if rec["x_max"] <= rec["x_min"] or rec["y_max"] <= rec["y_min"]:
                raise ValueError("x_max <= x_min or y_max <= y_min")
            image = str(rec["image"])
            if sizes and image in sizes:
                w, h = sizes[image]
                if rec["x_max"] > w or rec["y_max"] > h:
                    raise ValueError(f"box exceeds image size {w}x{h}")
            box = BoundingBox(*coords, RatClass.parse(rec["class"]))
            det = Detection(box, rec["confidence"])
        except (ValueError, TypeError, InvalidSpec) as exc:
            rejected.append(RejectedRecord(i, str(exc), raw.rstrip("\n")))
            continue
        grouped.setdefault(image, []).append(det)
    return grouped, rejected


def import_predictions(path: str | os.PathLike, sizes=None):
    with open(path) as fh:
        return parse_predictions(fh, sizes)


@dataclass
class ManifestEntry:
    iq: str
    spectrogram: str
    labels: str
    schedule: dict[str, Any]
    impairments: dict[str, Any]
    sync: dict[str, Any] | None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


class DatasetManifest:
    """Dataset index.  Appends go through one lock (single-writer contract)."""

    def __init__(self, root: str | os.PathLike, entries: Iterable[ManifestEntry] = ()):
        self.root = Path(root)
        self.entries = list(entries)
        self._lock = threading.Lock()

    def append(self, entry: ManifestEntry) -> None:
        with self._lock:
            self.entries.append(entry)

    def write(self, path: str | os.PathLike) -> None:
        with self._lock:
            data = [e.to_dict() for e in self.entries]
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps(data, indent=1, sort_keys=True))
        os.replace(tmp, path)

    @classmethod
    def read(cls, path: str | os.PathLike, root: str | os.PathLike | None = None) -> "DatasetManifest":
        path = Path(path)
        data = json.loads(path.read_text())
        return cls(root or path.parent, [ManifestEntry(**d) for d in data])

    def validate(self) -> list[str]:
        """Problems found: missing files or schedule hashes that disagree with the IQ sidecar."""
        from .iqfile import sidecar_path

        problems = []
        for e in self.entries:
            for ref in (e.iq, e.spectrogram, e.labels):
                if ref and not (self.root / ref).exists():
                    problems.append(f"missing {ref}")
            if not e.iq:
                continue
            side = sidecar_path(self.root / e.iq)
            if side.exists():
                meta = json.loads(side.read_text())
                want = TransmissionSchedule.from_dict(e.schedule).digest()
                if meta.get("schedule_hash") != want:
                    problems.append(f"schedule hash mismatch for {e.iq}")
        return problems
