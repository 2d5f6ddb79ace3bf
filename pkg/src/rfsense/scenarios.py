"""Schedule builders for the experiment scenes.

All builders are pure functions of their arguments (including ``seed``).
Frames are kept ``margin`` seconds away from both ends of the span so a
small timing error at the receiver cannot push them off the record.
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from .waveforms import FrameSpec, RatClass, TransmissionSchedule

SPAN = 50e-3
BAND = 20e6

# generator defaults, seconds / Hz
LTE_FD = (3e-3, 10e-3)
WIFI_FD = (1e-3, 2e-3)
LTE_BW = (5e6, 10e6, 15e6, 20e6)
WIFI_BW = (20e6,)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def _place_centre(
    rng: np.random.Generator, bw: float, band: float, grid: float = 100e3, guard: float = 500e3
) -> float:
    # sub-band frames keep ``guard`` from the band edges; their filter skirts
    # would otherwise wrap around to the opposite edge of the complex baseband
    lo, hi = bw / 2 + guard, band - bw / 2 - guard
    if hi <= lo:
        return band / 2
    # keep centres on a coarse grid so schedules serialise to short decimals
    return float(np.clip(np.round(rng.uniform(lo, hi) / grid) * grid, lo, hi))


def random_schedule(
    seed: int,
    span: float = SPAN,
    band_width: float = BAND,
    n_frames: Sequence[int] = (2, 5),
    rats: Sequence[str] = ("lte", "wifi"),
    lte_fd: Sequence[float] = LTE_FD,
    wifi_fd: Sequence[float] = WIFI_FD,
    lte_bw: Sequence[float] = LTE_BW,
    wifi_bw: Sequence[float] = WIFI_BW,
    min_gap: float = 2e-3,
    margin: float = 0.5e-3,
    power_db: float = 0.0,
) -> TransmissionSchedule:
    """A single emitter sequence of LTE/WiFi frames with no time overlap.

    The number of frames is drawn from ``n_frames`` (inclusive range); frames
    that do not fit are skipped, so the result may hold fewer.
    """
    rng = np.random.default_rng(seed)
    count = int(rng.integers(n_frames[0], n_frames[1] + 1))
    picks = []
    for _ in range(count):
        rat = RatClass.parse(rats[int(rng.integers(len(rats)))])
        fd_range, bws = (lte_fd, lte_bw) if rat is RatClass.LTE else (wifi_fd, wifi_bw)
        fd = float(np.round(rng.uniform(*fd_range), 5))
        bw = float(bws[int(rng.integers(len(bws)))])
        picks.append((rat, fd, bw))
    usable = span - 2 * margin
    total = sum(p[1] for p in picks)
    while picks and total + min_gap * (len(picks) - 1) > usable:
        total -= picks.pop()[1]
    slack = usable - total - min_gap * max(len(picks) - 1, 0)
    # split the slack randomly between the gaps (including both ends)
    cuts = np.sort(rng.uniform(0, slack, size=len(picks)))
    frames = []
    t = margin
    prev_cut = 0.0
    for k, (rat, fd, bw) in enumerate(picks):
        t += cuts[k] - prev_cut
        prev_cut = cuts[k]
        t_start = float(np.round(t, 6))
        frames.append(
            FrameSpec(
                rat=rat,
                t_start=t_start,
                duration=fd,
                f_center=_place_centre(rng, bw, band_width),
                bandwidth=bw,
                power_db=power_db,
                seed=_seed(seed, k),
            )
        )
        t = t_start + fd + min_gap
    return TransmissionSchedule(band_width, span, tuple(frames))


def periodic_schedule(
    seed: int,
    rat: str = "lte",
    bandwidth: float = 10e6,
    f_center: float | None = None,
    fd: float = 5e-3,
    fi: float = 5e-3,
    span: float = SPAN,
    band_width: float = BAND,
    margin: float = 0.5e-3,
    power_db: float = 0.0,
) -> TransmissionSchedule:
    """A periodic train of identical frames (on-time ``fd``, off-time ``fi``).

    The first frame starts at a random phase within one period.  Without
    ``f_center`` the centre is drawn at random inside the band.
    """
    rng = np.random.default_rng(seed)
    period = fd + fi
    t = margin + float(np.round(rng.uniform(0, period), 6))
    if f_center is None:
        f_center = _place_centre(rng, bandwidth, band_width)
    frames = []
    k = 0
    while t + fd <= span - margin:
        frames.append(
            FrameSpec(rat, float(np.round(t, 7)), fd, f_center, bandwidth, power_db, _seed(seed, k))
        )
        t += period
        k += 1
    return TransmissionSchedule(band_width, span, tuple(frames))


def interference_schedule(
    seed: int,
    interferer_snr_db: float,
    desired_snr_db: float = 29.0,
    span: float = SPAN,
    band_width: float = BAND,
    n_frames: Sequence[int] = (2, 4),
    lte_fd: Sequence[float] = (4e-3, 8e-3),
    wifi_fd: Sequence[float] = WIFI_FD,
    min_gap: float = 3e-3,
    margin: float = 0.5e-3,
) -> TransmissionSchedule:
    """Desired 20 MHz LTE frames, each hit by a co-channel 20 MHz WiFi frame.

    Powers are relative: LTE at 0 dB, WiFi at ``interferer - desired`` dB, so
    adding noise at ``desired_snr_db`` below 0 dB gives both their SNRs.
    Each WiFi frame starts inside its LTE frame and may run past its end.
    """
    rng = np.random.default_rng(seed)
    lte = random_schedule(
        seed,
        span=span,
        band_width=band_width,
        n_frames=n_frames,
        rats=("lte",),
        lte_fd=lte_fd,
        lte_bw=(band_width,),
        min_gap=min_gap,
        margin=margin,
    )
    frames = list(lte.frames)
    rel = interferer_snr_db - desired_snr_db
    for k, f in enumerate(lte.frames):
        fd = float(np.round(rng.uniform(*wifi_fd), 5))
        latest = min(f.t_start + f.duration, span - margin - fd)
        t = float(np.round(rng.uniform(f.t_start, max(f.t_start, latest)), 6))
        frames.append(
            FrameSpec(RatClass.WIFI, t, fd, band_width / 2, band_width, rel, _seed(seed, 1000 + k))
        )
    return TransmissionSchedule(band_width, span, tuple(frames))


BUILDERS = {
    "random": random_schedule,
    "periodic": periodic_schedule,
    "interference": interference_schedule,
}


def build_schedule(params: dict[str, Any]) -> TransmissionSchedule:
    """Dispatch on ``params["scenario"]``; remaining keys are builder arguments."""
    params = dict(params)
    kind = params.pop("scenario", "random")
    if "scene" in params:
        params["seed"] = _seed(int(params.pop("scene")), int(params.pop("base_seed", 0)))
    return BUILDERS[kind](**params)
