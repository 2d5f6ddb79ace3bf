"""Figures for the sweep and feature-study outputs (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_LABELS = {
    "snr_db": "SNR (dB)",
    "interferer_snr_db": "Interferer SNR (dB)",
    "b_w": "Bandwidth",
    "f_c": "Centre frequency",
    "fd": "Frame duration",
    "fi": "Inter-frame duration",
}


def _num(v: Any) -> float | None:
    return float(v) if v not in ("", None) else None


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_rates(rows: Sequence[dict[str, Any]], x: str, path: str | Path) -> Path:
    """Detection rate and precision against the swept variable."""
    xs = [float(r[x]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label, marker in (("detection_rate", "Detection rate", "o"), ("precision", "Precision", "s")):
        pts = [(xv, _num(r[key])) for xv, r in zip(xs, rows) if _num(r[key]) is not None]
        if pts:
            ax.plot([p[0] for p in pts], [100 * p[1] for p in pts], marker=marker, label=label)
    ax.set_xlabel(_LABELS.get(x, x))
    ax.set_ylabel("%")
    ax.set_ylim(0, 105)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def _bxp_stats(row: dict[str, Any], label: str) -> dict[str, Any]:
    return {
        "label": label,
        "med": float(row["median"]),
        "q1": float(row["q1"]),
        "q3": float(row["q3"]),
        "whislo": float(row["whisker_low"]),
        "whishi": float(row["whisker_high"]),
        "mean": float(row["mean"]),
        "fliers": [],
    }


def plot_feature_deviation(rows: Sequence[dict[str, Any]], path: str | Path, axis: str | None = None) -> Path:
    """2x2 boxplots of the percentage deviations, one box per value of ``axis``.

    The default axis is the first non-pooled grouping in ``rows``; the
    pooled box is drawn first.  Boxes come from precomputed statistics.
    """
    if axis is None:
        axis = next((r["axis"] for r in rows if r["axis"] != "all"), "all")
    fig, axs = plt.subplots(2, 2, figsize=(8, 6))
    for ax, feat in zip(axs.ravel(), ("b_w", "f_c", "fd", "fi")):
        stats = []
        for r in rows:
            if r["feature"] != feat or not r.get("median"):
                continue
            if r["axis"] == "all":
                stats.insert(0, _bxp_stats(r, "all"))
            elif r["axis"] == axis:
                v = float(r["value"])
                stats.append(_bxp_stats(r, f"{v * 1e3:g} ms" if axis in ("fd", "fi") else f"{v:g}"))
        if stats:
            ax.bxp(stats, showfliers=False, showmeans=True)
        ax.set_title(_LABELS[feat])
        ax.set_ylabel("Deviation (%)")
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
