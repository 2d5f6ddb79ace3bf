"""Reference computations written independently of the package code.

Each oracle takes the slow, obvious route (explicit loops, brute force,
pixel counting) so that it shares no arithmetic shortcuts with the
implementation it checks.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
from scipy import signal


def occupied_bandwidth(x: np.ndarray, fs: float, drop_db: float = 20.0, nperseg: int = 2048) -> float:
    """Width between the outermost Welch PSD bins within ``drop_db`` of the in-band level.

    The in-band level is the median of the bins above the PSD mean, which
    for a flat OFDM spectrum is its plateau.
    """
    f, p = signal.welch(x, fs, nperseg=nperseg, return_onesided=False, detrend=False)
    p = np.fft.fftshift(p)
    level = np.median(p[p > p.mean()])
    above = np.flatnonzero(p >= level * 10 ** (-drop_db / 10))
    return (above[-1] - above[0] + 1) * fs / nperseg


def spectral_centroid(x: np.ndarray, fs: float, nperseg: int = 2048) -> float:
    f, p = signal.welch(x, fs, nperseg=nperseg, return_onesided=False, detrend=False)
    return float(np.sum(f * p) / np.sum(p))


def cyclic_autocorrelation(z: np.ndarray) -> np.ndarray:
    n = len(z)
    out = np.zeros(n, dtype=complex)
    for lag in range(n):
        acc = 0j
        for k in range(n):
            acc += z[k] * np.conj(z[(k + lag) % n])
        out[lag] = acc
    return out


def zc_direct(root: int, length: int) -> list[complex]:
    import cmath

    return [cmath.exp(-1j * cmath.pi * root * k * (k + 1) / length) for k in range(length)]


def box_mask(box, axes) -> np.ndarray:
    """Boolean image (rows = time) with the box's pixels set."""
    m = np.zeros((axes.height, axes.width), dtype=bool)
    m[box.y_min - axes.y_min : box.y_max - axes.y_min, box.x_min - axes.x_min : box.x_max - axes.x_min] = True
    return m


def pixel_count_features(box, axes) -> dict[str, float]:
    """Bandwidth, duration and centre from counting occupied rows/columns of the box mask."""
    m = box_mask(box, axes)
    cols = np.flatnonzero(m.any(axis=0))
    rows = np.flatnonzero(m.any(axis=1))
    i_f = (axes.f2 - axes.f1) / axes.width
    i_t = (axes.t2 - axes.t1) / axes.height
    centre = axes.f1 + (cols[0] + cols[-1] + 1) / 2 * i_f
    return {"b_w": len(cols) * i_f, "fd": len(rows) * i_t, "f_c": centre}


def box_iou(a: tuple, b: tuple) -> float:
    """IoU of half-open pixel rectangles (x0, x1, y0, y1) by counting pixels."""
    pa = {(x, y) for x in range(a[0], a[1]) for y in range(a[2], a[3])}
    pb = {(x, y) for x in range(b[0], b[1]) for y in range(b[2], b[3])}
    return len(pa & pb) / len(pa | pb)


def max_matching(iou_table: np.ndarray, threshold: float) -> int:
    """Largest one-to-one assignment with IoU > threshold, by exhaustive search."""
    n_gt, n_det = iou_table.shape
    best = 0
    for k in range(min(n_gt, n_det), 0, -1):
        for gts in itertools.combinations(range(n_gt), k):
            for dets in itertools.permutations(range(n_det), k):
                if all(iou_table[g, d] > threshold for g, d in zip(gts, dets)):
                    return k
    return best


def ap_by_hand(hits: list[bool], n_positive: int) -> Fraction:
    """All-points interpolated AP in exact rational arithmetic.

    For every true positive at rank r, take the best precision reached at
    any rank >= r, and weight it by one recall step 1/n_positive.
    """
    prec = []
    tp = 0
    for rank, hit in enumerate(hits, start=1):
        tp += hit
        prec.append(Fraction(tp, rank))
    total = Fraction(0)
    for r, hit in enumerate(hits):
        if hit:
            total += max(prec[r:]) / n_positive
    return total


def type7_quantile(sorted_x: list[float], q: float) -> float:
    h = (len(sorted_x) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(sorted_x) - 1)
    return sorted_x[lo] + (h - lo) * (sorted_x[hi] - sorted_x[lo])


def energy_inside(x: np.ndarray, fs: float, t_span: tuple[float, float], f_span: tuple[float, float],
                  nfft: int = 256) -> float:
    """Fraction of STFT energy (non-overlapping rectangular blocks) inside a time x frequency region.

    Frequencies are baseband (centred on DC); a block counts as inside when
    it overlaps ``t_span``.
    """
    n_blocks = len(x) // nfft
    blocks = x[: n_blocks * nfft].reshape(n_blocks, nfft)
    power = np.abs(np.fft.fftshift(np.fft.fft(blocks, axis=1), axes=1)) ** 2
    freqs = (np.arange(nfft) - nfft // 2) * fs / nfft
    t0 = np.arange(n_blocks) * nfft / fs
    t1 = t0 + nfft / fs
    rows = (t1 > t_span[0]) & (t0 < t_span[1])
    cols = (freqs >= f_span[0]) & (freqs <= f_span[1])
    return float(power[np.ix_(rows, cols)].sum() / power.sum())
