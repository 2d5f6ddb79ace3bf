"""IQ sample files: interleaved little-endian float32 (I, Q) plus a JSON sidecar.

``capture.iq`` is accompanied by ``capture.meta.json`` holding the sample
rate and whatever provenance the record carries (schedule, seeds,
impairment chain, ...).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .waveforms import IQRecord


def sidecar_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_iq(path: str | os.PathLike, rec: IQRecord) -> Path:
    path = Path(path)
    buf = np.empty(2 * len(rec), dtype="<f4")
    buf[0::2] = rec.samples.real
    buf[1::2] = rec.samples.imag
    buf.tofile(path)
    meta = {"sample_rate": rec.sample_rate, "n_samples": len(rec), **rec.meta}
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True))
    return path


def read_iq(path: str | os.PathLike) -> IQRecord:
    path = Path(path)
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 2:
        raise ValueError(f"{path}: odd number of float32 values")
    meta = json.loads(sidecar_path(path).read_text())
    fs = float(meta.pop("sample_rate"))
    meta.pop("n_samples", None)
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    return IQRecord(samples, fs, meta)
