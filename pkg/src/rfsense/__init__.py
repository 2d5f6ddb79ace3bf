"""Spectrogram-based RAT detection toolkit.

Synthesises LTE/WiFi-like OFDM frame schedules, passes them through a
simulated radio link with a Zadoff-Chu preamble for alignment, labels the
resulting spectrograms automatically, runs a baseline detector and
evaluates detections and extracted transmission features.
"""

from .annotate import BoundingBox, Detection, ground_truth_boxes
from .spectro import Spectrogram, SpectrogramAxes, compute_spectrogram
from .waveforms import FrameSpec, IQRecord, RatClass, TransmissionSchedule

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Detection",
    "FrameSpec",
    "IQRecord",
    "RatClass",
    "Spectrogram",
    "SpectrogramAxes",
    "TransmissionSchedule",
    "compute_spectrogram",
    "ground_truth_boxes",
]
