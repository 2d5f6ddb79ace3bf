import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from rfsense.annotate import ground_truth_boxes
from rfsense.errors import TooShort
from rfsense.spectro import (
    Spectrogram,
    SpectrogramAxes,
    axes_path,
    compute_spectrogram,
    load_spectrogram,
    read_axes,
    save_spectrogram,
    to_image,
    write_axes,
)
from rfsense.waveforms import FrameSpec, IQRecord, TransmissionSchedule, render_schedule

FS = 20e6


def noise(n, seed=0):
    rng = np.random.default_rng(seed)
    return IQRecord((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2), FS)


def test_default_axes_calibration():
    spec = compute_spectrogram(noise(1_000_000))
    ax = spec.axes
    # floor((N - fft) / hop) + 1 rows; the last one averages a partial hop
    assert spec.shape == (97, 104)
    assert ax.i_f == pytest.approx(192_307.692, abs=1e-3)
    assert abs(ax.i_t - 519e-6) <= 0.01 * 519e-6
    assert ax.i_t == pytest.approx(10384 / FS)
    assert (ax.f1, ax.f2, ax.t1) == (0.0, FS, 0.0)


@pytest.mark.parametrize("n,fft,hop", [(1000, 64, 100), (5000, 104, 1), (104, 104, 50), (2000, 16, 7)])
def test_row_count(n, fft, hop):
    spec = compute_spectrogram(noise(n), fft, hop)
    assert spec.shape == ((n - fft) // hop + 1, fft)


def test_too_short():
    with pytest.raises(TooShort):
        compute_spectrogram(noise(50))


def test_tone_lands_in_expected_column():
    n = np.arange(1_000_000)
    # f1 + 5 MHz in band coordinates is -5 MHz at baseband
    rec = IQRecord(np.exp(2j * np.pi * (5e6 - FS / 2) * n / FS), FS)
    spec = compute_spectrogram(rec)
    want = round(5e6 / spec.axes.i_f)
    assert np.all(np.argmax(spec.power_db, axis=1) == want)


def test_start_time_comes_from_meta():
    rec = noise(20_000)
    rec.meta["t0"] = 0.25
    assert compute_spectrogram(rec, 104, 1000).axes.t1 == 0.25


def test_zero_bins_hit_the_floor():
    spec = compute_spectrogram(IQRecord(np.zeros(2000), FS), 104, 500)
    assert np.all(spec.power_db == -120.0)
    assert np.all(np.isfinite(spec.power_db))


def test_parseval():
    rec = noise(400_000, seed=3)
    spec = compute_spectrogram(rec, 104, 2080)
    total = spec.linear().sum(axis=1).mean()
    assert total == pytest.approx(np.mean(np.abs(rec.samples) ** 2), rel=0.05)


@settings(max_examples=200, deadline=None)
@given(
    w=st.integers(1, 300), h=st.integers(1, 300),
    f1=st.floats(-1e9, 1e9), df=st.floats(1e3, 1e9),
    t1=st.floats(-10, 10), dt=st.floats(1e-4, 10),
    x0=st.integers(-50, 50), y0=st.integers(-50, 50),
    data=st.data(),
)
def test_pixel_centre_round_trip(w, h, f1, df, t1, dt, x0, y0, data):
    ax = SpectrogramAxes(f1, f1 + df, t1, t1 + dt, x0, x0 + w, y0, y0 + h)
    x = data.draw(st.integers(x0, x0 + w - 1))
    y = data.draw(st.integers(y0, y0 + h - 1))
    assert ax.to_pixel(*ax.pixel_centre(x, y)) == (x, y)


def test_axes_validation():
    with pytest.raises(ValueError):
        SpectrogramAxes(1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        SpectrogramAxes(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        SpectrogramAxes(0.0, 1.0, 0.0, 1.0, 5, 5, 0, 1)


@pytest.mark.parametrize("fc,bw,t0,fd", [(10e6, 20e6, 5e-3, 4e-3), (6e6, 5e6, 12.3e-3, 7.7e-3), (14e6, 10e6, 30e-3, 3e-3)])
def test_frame_edges_within_one_pixel_of_mapping(fc, bw, t0, fd):
    sched = TransmissionSchedule(FS, 50e-3, [FrameSpec("lte", t0, fd, fc, bw, 0.0, 1)])
    spec = compute_spectrogram(render_schedule(sched))
    (gt,) = ground_truth_boxes(sched, spec.axes)
    lit = spec.power_db > spec.power_db.max() - 10
    rows = np.flatnonzero(lit.any(axis=1))
    cols = np.flatnonzero(lit.any(axis=0))
    assert abs(rows[0] - gt.y_min) <= 1 and abs(rows[-1] + 1 - gt.y_max) <= 1
    assert abs(cols[0] - gt.x_min) <= 1 and abs(cols[-1] + 1 - gt.x_max) <= 1


def test_to_image_mapping():
    ax = SpectrogramAxes(0, 1, 0, 1, 0, 3, 0, 2)
    spec = Spectrogram(ax, np.array([[-90.0, -90.0, -90.0], [-40.0, -65.0, 0.0]]))
    img = to_image(spec, -90.0, -40.0)
    assert img.dtype == np.uint8
    assert img[0].tolist() == [0, 0, 0]
    assert img[1].tolist() == [255, 128, 255]
    with pytest.raises(ValueError):
        to_image(spec, 0.0, 0.0)


def test_axes_sidecar_round_trip(tmp_path):
    ax = SpectrogramAxes(1.5, 2e7, 0.001, 0.05, 0, 104, 0, 96)
    write_axes(tmp_path / "a.axes.json", ax, shape=[96, 104])
    assert read_axes(tmp_path / "a.axes.json") == ax


def test_save_and_load(tmp_path):
    spec = compute_spectrogram(noise(200_000), 104, 10384)
    files = save_spectrogram(tmp_path / "s", spec)
    assert files["axes"] == axes_path(tmp_path / "s")
    raw = np.fromfile(files["matrix"], dtype="<f4")
    assert raw.size == spec.power_db.size
    back = load_spectrogram(tmp_path / "s")
    assert back.axes == spec.axes
    assert np.array_equal(back.power_db, spec.power_db.astype(np.float32).astype(np.float64))
    img = Image.open(files["image"])
    assert img.mode == "L" and img.size == (104, spec.shape[0])
    info = json.loads(files["axes"].read_text())
    assert info["stft"]["fft_size"] == 104
    assert "image" not in save_spectrogram(tmp_path / "t", spec, image=None)
