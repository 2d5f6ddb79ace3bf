"""Task functions for each task kind.

Every function has the signature ``fn(params, inputs, out)``: ``inputs``
are the committed directories of the parent tasks (in the node's input
order) and ``out`` is the directory to fill.  Functions must be pure given
their parameters and inputs; seeds always come in through ``params``.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any

from ..annotate import (
    export_voc,
    ground_truth_pairs,
    import_predictions,
    parse_voc,
    prediction_line,
    sync_time,
)
from ..channel import AwgnSnr, Cfo, Gain, ImpairmentChain, Multipath
from ..detect import DetectorConfig, detect
from ..evalmetrics import count_matches, iou, match
from ..features import (
    ExtractedFeatures,
    extract_box_features,
    extract_set_features,
    feature_deviation,
    truth_features,
    truth_set_features,
)
from ..iqfile import read_iq, write_iq
from ..loopback import Capture, Framing, over_the_air
from ..scenarios import build_schedule
from ..spectro import compute_spectrogram, load_spectrogram, read_axes, save_spectrogram
from ..sync import PreambleConfig, SyncResult
from ..waveforms import RatClass, TransmissionSchedule
from .dag import register

SCHEDULE = "schedule.json"
CHAIN = "chain.json"
CAPTURE = "capture.json"
PAYLOAD = "payload.iq"
SPEC_PREFIX = "spectrogram"
LABELS = "labels.xml"
PREDICTIONS = "predictions.jsonl"
FEATURES = "features.csv"
EVAL = "eval.json"


def _dump(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load(path: Path) -> Any:
    return json.loads(path.read_text())


def _params(task_dir: Path) -> dict[str, Any]:
    return _load(task_dir / "task.json")["params"]


def image_id(spectrogram_dir: Path) -> str:
    """Images are named after their spectrogram task, which makes them unique per run."""
    return spectrogram_dir.name


# --------------------------------------------------------------------------- synth / impair


@register("synth")
def synth(params: dict[str, Any], inputs: list[Path], out: Path) -> None:
    sched = build_schedule(params)
    _dump(out / SCHEDULE, sched.to_dict())


def chain_from_params(params: dict[str, Any]) -> ImpairmentChain:
    """Channel order: multipath, CFO, gain, then AWGN (noise is added last, at the receiver)."""
    steps: list = []
    taps = params.get("multipath")
    if taps:
        steps.append(Multipath(tuple(complex(t[0], t[1]) if isinstance(t, list) else t for t in taps)))
    if params.get("cfo_hz"):
        steps.append(Cfo(float(params["cfo_hz"])))
    if params.get("gain_db"):
        steps.append(Gain(float(params["gain_db"])))
    snr = params.get("snr_db")
    if snr is not None:
        steps.append(AwgnSnr(float(snr), params.get("reference_power_db")))
    return ImpairmentChain(tuple(steps), int(params.get("noise_seed", 0)))


@register("impair")
def impair(params: dict[str, Any], inputs: list[Path], out: Path) -> None:
    _dump(out / CHAIN, chain_from_params(params).to_dict())


# --------------------------------------------------------------------------- record


def _framing(params: dict[str, Any]) -> Framing:
    pre = PreambleConfig.from_dict(params["preamble"]) if params.get("preamble") else PreambleConfig()
    return Framing(
        lead=int(params.get("lead", Framing.lead)),
        guard=int(params.get("guard", Framing.guard)),
        preamble=pre,
    )


def capture(synth_dir: Path, impair_dir: Path, params: dict[str, Any]) -> Capture:
    sched = TransmissionSchedule.from_dict(_load(synth_dir / SCHEDULE))
    chain = ImpairmentChain.from_dict(_load(impair_dir / CHAIN))
    return over_the_air(
        sched,
        chain,
        _framing(params),
        threshold=float(params.get("threshold", 0.5)),
        max_retries=int(params.get("max_retries", 3)),
    )


@register("record")
def record(params: dict[str, Any], inputs: list[Path], out: Path) -> None:
    """Send the schedule over the loopback link; retransmits on a missed preamble.

    With ``store_iq`` false only the capture summary is kept; downstream
    tasks re-derive the (deterministic) payload from the parent tasks.
    """
    synth_dir, impair_dir = inputs
    cap = capture(synth_dir, impair_dir, params)
    _dump(
        out / CAPTURE,
        {
            "sync": cap.sync.to_dict(),
            "attempts": cap.attempts,
            "payload_offset": cap.payload_offset,
            "t0": cap.record.meta["t0"],
            "schedule_hash": cap.record.meta["schedule_hash"],
        },
    )
    if params.get("store_iq", True):
        write_iq(out / PAYLOAD, cap.record)


def load_capture(record_dir: Path) -> tuple[SyncResult, int]:
    info = _load(record_dir / CAPTURE)
    return SyncResult.from_dict(info["sync"]), int(info["payload_offset"])


def load_payload(synth_dir: Path, impair_dir: Path, record_dir: Path):
    path = record_dir / PAYLOAD
    if path.exists():
        return read_iq(path)
    return capture(synth_dir, impair_dir, _params(record_dir)).record


# --------------------------------------------------------------------------- spectrogram / label


@register("spectrogram")
def spectrogram(params: dict[str, Any], inputs: list[Path], out: Path) -> None:
    synth_dir, impair_dir, record_dir = inputs
    rec = load_payload(synth_dir, impair_dir, record_dir)
    spec = compute_spectrogram(
        rec,
        fft_size=int(params.get("fft_size", 104)),
        hop=int(params.get("hop", 10384)),
        window=params.get("window", "hann"),
    )
    save_spectrogram(
        out / SPEC_PREFIX,
        spec,
        image="png" if params.get("image", True) else None,
        floor_db=params.get("floor_db"),
        ceil_db=params.get("ceil_db"),
    )


def spectrogram_prefix(spectrogram_dir: Path) -> Path:
    return spectrogram_dir / SPEC_PREFIX


@register("label")
def label(params: dict[str, Any], inputs: list[Path], out: Path) -> None:
    synth_dir, record_dir, spec_dir = inputs
    sched = TransmissionSchedule.from_dict(_load(synth_dir / SCHEDULE))
    sync, offset = load_capture(record_dir)
    axes = read_axes(spectrogram_prefix(spec_dir).with_name(SPEC_PREFIX + ".axes.json"))
    pairs = ground_truth_pairs(sched, axes, sync, offset)
    extra = {"schedule_hash": sched.digest()}
    extra.update({k: str(v) for k, v in sorted(params.get("source", {}).items())})
    doc = export_voc(image_id(spec_dir) + ".png", [b for _, b in pairs], axes, extra)
    (out / LABELS).write_text(doc)
    _dump(out / "frames.json", [k for k, _ in pairs])


def load_labels(label_dir: Path):
    return parse_voc((label_dir / LABELS).read_text()).boxes, _load(label_dir / "frames.json")


# --------------------------------------------------------------------------- detect / extract


@register("detect")
def detect_task(params: dict[str, Any], inputs: list[Path], out: Path) -> None:
    (spec_dir,) = inputs
    spec = load_spectrogram(spectrogram_prefix(spec_dir))
    # detector fields may also arrive as top-level parameters (grid axes)
    fields = {k: v for k, v in params.items() if k != "detector"}
    cfg = DetectorConfig.from_dict({**params.get("detector", {}), **fields})
    img = image_id(spec_dir)
    lines = [prediction_line(img, d) for d in detect(spec, cfg)]
    (out / PREDICTIONS).write_text("".join(line + "\n" for line in lines))


def load_predictions(detect_dir: Path):
    grouped, rejected = import_predictions(detect_dir / PREDICTIONS)
    if rejected:
        raise ValueError(f"{detect_dir}: {len(rejected)} malformed prediction records")
    dets = [d for ds in grouped.values() for d in ds]
    return dets


FEATURE_COLUMNS = (
    "image", "row", "class", "confidence", "x_min", "x_max", "y_min", "y_max",
    "b_w_hz", "f_c_hz", "fd_s", "frame_count", "mean_fd_s", "cwt_s", "fi_s", "clamped",
)


def feature_rows(image: str, dets, axes) -> list[dict[str, Any]]:
    """One row per detection plus one aggregate row (CWT/FI) for the image."""
    rows = []
    for d in dets:
        f = extract_box_features(d.box, axes)
        b = d.box
        rows.append({
            "image": image, "row": "box", "class": b.label.value, "confidence": repr(d.confidence),
            "x_min": b.x_min, "x_max": b.x_max, "y_min": b.y_min, "y_max": b.y_max,
            "b_w_hz": repr(f.b_w), "f_c_hz": repr(f.f_c), "fd_s": repr(f.fd),
        })
    s = extract_set_features([d.box for d in dets], axes)
    rows.append({
        "image": image, "row": "aggregate", "frame_count": s.stats.frame_count,
        "mean_fd_s": repr(s.stats.mean_fd), "cwt_s": repr(s.cwt),
        "fi_s": "" if s.fi is None else repr(s.fi), "clamped": int(s.clamped),
    })
    return rows


def rows_to_csv(rows: list[dict[str, Any]], columns=FEATURE_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), restval="", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def read_aggregate(extract_dir: Path) -> dict[str, str]:
    with open(extract_dir / FEATURES, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["row"] == "aggregate":
                return row
    raise ValueError(f"{extract_dir}: no aggregate row")


@register("extract")
def extract(params: dict[str, Any], inputs: list[Path], out: Path) -> None:
    spec_dir, detect_dir = inputs
    axes = read_axes(spec_dir / (SPEC_PREFIX + ".axes.json"))
    rows = feature_rows(image_id(spec_dir), load_predictions(detect_dir), axes)
    (out / FEATURES).write_text(rows_to_csv(rows))


# --------------------------------------------------------------------------- eval


@register("eval")
def evaluate_task(params: dict[str, Any], inputs: list[Path], out: Path) -> None:
    """Per-image scores: match counts, per-class counts and feature deviations.

    Deviations compare detected boxes with the scheduled frame they matched;
    FI compares the image's extracted FI (the ``extract`` aggregate row)
    with the schedule's.
    """
    synth_dir, record_dir, spec_dir, label_dir, detect_dir, extract_dir = inputs
    thr = float(params.get("iou_threshold", 0.5))
    sched = TransmissionSchedule.from_dict(_load(synth_dir / SCHEDULE))
    sync, offset = load_capture(record_dir)
    axes = read_axes(spec_dir / (SPEC_PREFIX + ".axes.json"))
    gt, frames = load_labels(label_dir)
    dets = load_predictions(detect_dir)

    m = match(gt, dets, thr)
    counts = count_matches(m, gt, dets)
    per_class = {}
    for rat in (RatClass.LTE, RatClass.WIFI):
        idx = [i for i, b in enumerate(gt) if b.label is rat]
        hit = {g for g, _, _ in m.pairs}
        per_class[rat.value] = {"n_gt": len(idx), "matched": sum(1 for i in idx if i in hit)}

    deviations: dict[str, list[float]] = {"b_w": [], "f_c": [], "fd": [], "fi": []}
    for g, d, _ in m.pairs:
        got = extract_box_features(dets[d].box, axes)
        dev = feature_deviation(got, truth_features(sched.frames[frames[g]]), sched.band_width)
        for k, v in dev.percent.items():
            deviations[k].append(v)
    got_fi = read_aggregate(extract_dir)["fi_s"]
    want_set = truth_set_features(sched.frames, axes, sync_time(sync, sched.sample_rate, offset))
    if got_fi and want_set.fi is not None:
        dev = feature_deviation(
            ExtractedFeatures(0.0, 0.0, 0.0, fi=float(got_fi)),
            ExtractedFeatures(0.0, 0.0, 0.0, fi=want_set.fi),
            sched.band_width,
        )
        deviations["fi"].append(dev.percent["fi"])

    _dump(out / EVAL, {
        "image": image_id(spec_dir),
        "iou_threshold": thr,
        "counts": {"n_gt": counts.n_gt, "n_det": counts.n_det, "matched": counts.matched,
                   "correct": counts.correct},
        "per_class": per_class,
        "pairs": [[g, d, v] for g, d, v in m.pairs],
        "deviations": deviations,
        "best_iou": [max((iou(b, x.box) for x in dets), default=0.0) for b in gt],
    })
