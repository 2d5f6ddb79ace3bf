import json
import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfsense.annotate import (
    BoundingBox,
    DatasetManifest,
    Detection,
    ManifestEntry,
    export_predictions,
    export_voc,
    ground_truth_boxes,
    import_predictions,
    import_voc,
    parse_predictions,
    parse_voc,
    prediction_line,
)
from rfsense.errors import InvalidSpec, ParseError
from rfsense.iqfile import write_iq
from rfsense.spectro import SpectrogramAxes, compute_spectrogram
from rfsense.sync import SyncResult
from rfsense.waveforms import FrameSpec, RatClass, TransmissionSchedule, render_schedule

DATA = Path(__file__).parent / "data"
FS = 20e6
I_T = 519.2e-6
AXES = SpectrogramAxes(0.0, FS, 0.0, 96 * I_T, 0, 104, 0, 96)


def sched(*frames, span=50e-3):
    return TransmissionSchedule(FS, span, frames)


def test_full_frame_is_full_image():
    ax = SpectrogramAxes(0.0, FS, 0.0, 50e-3, 0, 104, 0, 96)
    (box,) = ground_truth_boxes(sched(FrameSpec("lte", 0.0, 50e-3, 10e6, 20e6)), ax)
    assert box.as_tuple() == (0, 104, 0, 96)


def test_hand_mapping():
    (box,) = ground_truth_boxes(sched(FrameSpec("lte", 10e-3, 4e-3, 10e6, 10e6)), AXES)
    assert (box.x_min, box.x_max) == (26, 78)
    assert (box.y_min, box.y_max) == (19, 27)
    assert box.label is RatClass.LTE


def test_sync_shifts_rows():
    frame = FrameSpec("wifi", 10e-3, 1e-3, 10e6, 20e6)
    ax = SpectrogramAxes(0.0, FS, 0.0, 60e-3, 0, 104, 0, 120)
    base = ground_truth_boxes(sched(frame), ax)[0]
    # payload starts 5 ms into the receive timeline
    sync = SyncResult(True, 90_000, 0.0, 20.0, 0.9)
    moved = ground_truth_boxes(sched(frame), ax, sync, payload_offset=10_000)[0]
    assert moved.y_min == base.y_min + 10 and moved.y_max == base.y_max + 10
    with pytest.raises(InvalidSpec):
        ground_truth_boxes(sched(frame), ax, SyncResult(False, 0, 0.0, 0.0, 0.0))


def test_frames_outside_axes_are_dropped(caplog):
    ax = SpectrogramAxes(0.0, FS, 0.0, 20e-3, 0, 104, 0, 40)
    frames = (FrameSpec("lte", 5e-3, 4e-3, 10e6, 10e6), FrameSpec("lte", 30e-3, 4e-3, 10e6, 10e6))
    with caplog.at_level(logging.WARNING):
        boxes = ground_truth_boxes(sched(*frames), ax)
    assert len(boxes) == 1
    assert "dropped 1 frame" in caplog.text


def test_partially_outside_frames_are_clipped():
    ax = SpectrogramAxes(0.0, FS, 0.0, 20e-3, 0, 104, 0, 40)
    (box,) = ground_truth_boxes(sched(FrameSpec("lte", 18e-3, 4e-3, 10e6, 10e6)), ax)
    assert box.y_max == 40


@pytest.mark.parametrize("seed", range(6))
def test_boxes_hold_the_frame_energy(seed):
    rng = np.random.default_rng(seed)
    rat = "wifi" if seed % 3 == 0 else "lte"
    bw = 20e6 if rat == "wifi" else float(rng.choice([5e6, 10e6, 15e6, 20e6]))
    fd = float(rng.uniform(1e-3, 2e-3) if rat == "wifi" else rng.uniform(3e-3, 10e-3))
    fc = float(rng.uniform(bw / 2 + 0.5e6, FS - bw / 2 - 0.5e6)) if bw < FS else FS / 2
    t0 = float(rng.uniform(1e-3, 40e-3))
    s = sched(FrameSpec(rat, t0, fd, fc, bw, 0.0, seed))
    spec = compute_spectrogram(render_schedule(s))
    (box,) = ground_truth_boxes(s, spec.axes)
    lin = spec.linear()
    inside = lin[box.y_min : box.y_max, box.x_min : box.x_max].sum()
    assert inside / lin.sum() >= 0.95


def test_box_validation():
    with pytest.raises(InvalidSpec):
        BoundingBox(3, 3, 0, 1)
    with pytest.raises(InvalidSpec):
        BoundingBox(0, 1.5, 0, 1)
    with pytest.raises(InvalidSpec):
        Detection(BoundingBox(0, 1, 0, 1), 1.2)
    with pytest.raises(InvalidSpec):
        Detection(BoundingBox(0, 1, 0, 1), float("nan"))
    assert BoundingBox(0, 4, 1, 3).area == 8


def test_voc_empty():
    doc = export_voc("img.png", [])
    assert "<object>" not in doc
    assert import_voc(doc) == []


def test_voc_single_lte_box():
    doc = export_voc("img.png", [BoundingBox(26, 78, 19, 27, "lte")], AXES)
    ann = parse_voc(doc)
    assert "<name>lte</name>" in doc
    # VOC stores 1-based inclusive corners
    assert "<xmin>27</xmin>" in doc and "<xmax>78</xmax>" in doc
    assert "<ymin>20</ymin>" in doc and "<ymax>27</ymax>" in doc
    assert ann.boxes == [BoundingBox(26, 78, 19, 27, "lte")]
    assert (ann.width, ann.height) == (104, 96)


def test_voc_source_extras():
    doc = export_voc("x.png", [], extra={"snr_db": 12.0, "schedule_hash": "ab"})
    assert parse_voc(doc).source["snr_db"] == "12.0"


box_strategy = st.builds(
    lambda x, w, y, h, lab: BoundingBox(x, x + w, y, y + h, lab),
    st.integers(0, 100), st.integers(1, 104), st.integers(0, 90), st.integers(1, 96),
    st.sampled_from(list(RatClass)),
)


@settings(max_examples=100, deadline=None)
@given(boxes=st.lists(box_strategy, max_size=12))
def test_voc_round_trip(boxes):
    assert import_voc(export_voc("a/b.png", boxes)) == boxes


def test_voc_malformed():
    with pytest.raises(ParseError) as exc:
        parse_voc("<annotation>\n<object>\n</annotation>")
    assert exc.value.line == 3
    with pytest.raises(ParseError):
        parse_voc("<root/>")
    with pytest.raises(ParseError):
        parse_voc("<annotation><object><name>lte</name><bndbox><xmin>3</xmin></bndbox></object></annotation>")
    with pytest.raises(ParseError):
        parse_voc(
            "<annotation><object><name>lte</name><bndbox><xmin>5</xmin><xmax>4</xmax>"
            "<ymin>1</ymin><ymax>2</ymax></bndbox></object></annotation>"
        )


def test_predictions_fixture():
    grouped, rejected = import_predictions(DATA / "three_predictions.jsonl")
    assert not rejected
    assert sum(len(v) for v in grouped.values()) == 3
    assert list(grouped) == ["scene_a", "scene_b"]
    assert grouped["scene_a"][0] == Detection(BoundingBox(26, 78, 19, 27, "lte"), 0.91)


@settings(max_examples=50, deadline=None)
@given(
    items=st.lists(
        st.tuples(st.sampled_from(["a", "b", "c"]), box_strategy, st.floats(0, 1)), max_size=10
    )
)
def test_predictions_round_trip(items, tmp_path_factory):
    path = tmp_path_factory.mktemp("p") / "pred.jsonl"
    dets = [(img, Detection(b, c)) for img, b, c in items]
    export_predictions(path, dets)
    grouped, rejected = import_predictions(path)
    assert not rejected
    assert [(img, d) for img, ds in grouped.items() for d in ds] == sorted(
        dets, key=lambda t: [img for img, _ in dets].index(t[0])
    )


def test_predictions_rejections():
    good = prediction_line("a", Detection(BoundingBox(1, 5, 1, 5, "wifi"), 0.5))
    lines = [
        good,
        json.dumps({"image": "a", "class": "lte", "confidence": 0.5, "x_min": 5, "x_max": 5, "y_min": 0, "y_max": 1}),
        json.dumps({"image": "a", "class": "lte", "confidence": 0.5, "x_min": -1, "x_max": 5, "y_min": 0, "y_max": 1}),
        json.dumps({"image": "a", "class": "lte", "confidence": 2.0, "x_min": 0, "x_max": 5, "y_min": 0, "y_max": 1}),
        json.dumps({"image": "a", "class": "gsm", "confidence": 0.5, "x_min": 0, "x_max": 5, "y_min": 0, "y_max": 1}),
        json.dumps({"image": "a", "class": "lte", "x_min": 0, "x_max": 5, "y_min": 0, "y_max": 1}),
        json.dumps({"image": "b", "class": "lte", "confidence": 0.5, "x_min": 0, "x_max": 200, "y_min": 0, "y_max": 1}),
        "not json",
        "",
    ]
    grouped, rejected = parse_predictions(lines, sizes={"b": (104, 96)})
    assert [r.line for r in rejected] == [2, 3, 4, 5, 6, 7, 8]
    assert len(grouped["a"]) == 1


def test_manifest(tmp_path):
    s = sched(FrameSpec("lte", 1e-3, 1e-3, 10e6, 20e6, 0.0, 1), span=3e-3)
    write_iq(tmp_path / "r.iq", render_schedule(s))
    (tmp_path / "r.f32").write_bytes(b"")
    (tmp_path / "r.xml").write_text(export_voc("r.png", []))
    entry = ManifestEntry("r.iq", "r.f32", "r.xml", s.to_dict(), {"steps": []}, None)
    m = DatasetManifest(tmp_path, [entry])
    m.write(tmp_path / "manifest.json")
    back = DatasetManifest.read(tmp_path / "manifest.json")
    assert back.entries[0].to_dict() == entry.to_dict()
    assert back.validate() == []

    other = sched(FrameSpec("lte", 0.5e-3, 1e-3, 10e6, 20e6, 0.0, 2), span=3e-3)
    back.append(ManifestEntry("r.iq", "missing.f32", "r.xml", other.to_dict(), {}, None))
    problems = back.validate()
    assert "missing missing.f32" in problems
    assert "schedule hash mismatch for r.iq" in problems
