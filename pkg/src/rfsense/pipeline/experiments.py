"""End-to-end experiments on top of the task graph.

Each experiment is a default configuration plus an aggregation of the
per-image ``eval`` outputs:

* ``snr``: detection rate / precision / AP per SNR point.
* ``interference``: the same per interferer SNR, desired LTE held fixed.
* ``features``: boxplot statistics of the feature deviations, pooled and
  per grid value.

``generate`` runs the labelling part of the chain only and exports an
image + VOC dataset.
"""

from __future__ import annotations

import dataclasses
import shutil
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..annotate import DatasetManifest, ManifestEntry, parse_voc
from ..config import merge, normalise_grid
from ..detect import DetectorConfig
from ..errors import InvalidSpec
from ..evalmetrics import DEFAULT_IOU, average_precision, deviation_stats, mean_ap
from ..scenarios import _seed
from ..waveforms import RatClass
from . import stages
from .dag import ParameterGrid, RunResult, Stage, expand, resolve_run_dir, run, task_dir, write_text_atomic

CHANNEL_KEYS = ("snr_db", "cfo_hz", "gain_db", "reference_power_db", "multipath")
RECORD_KEYS = ("threshold", "max_retries", "lead", "guard", "store_iq")
STFT_KEYS = ("fft_size", "hop", "window", "image", "floor_db", "ceil_db")
DETECTOR_KEYS = tuple(f.name for f in dataclasses.fields(DetectorConfig))
EVAL_KEYS = ("iou_threshold",)

_COMMON = {
    "run": {"workers": 1, "base_seed": 0},
    "channel": {"cfo_hz": 1500.0},
    "record": {"store_iq": False, "max_retries": 3, "threshold": 0.5},
    "stft": {"fft_size": 104, "hop": 10384, "window": "hann", "image": False},
    "detector": {},
    "eval": {"iou_threshold": DEFAULT_IOU},
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "snr": merge(_COMMON, {
        "grid": {"scene": 20, "snr_db": [-13, -10, -7, -5, -3, 0, 3, 6, 9, 12, 15, 20, 25, 29, 35]},
        "scenario": {"scenario": "random"},
        "experiment": {"x": "snr_db"},
    }),
    "interference": merge(_COMMON, {
        "grid": {"scene": 20, "interferer_snr_db": [3, 8, 13, 18, 23, 29, 35]},
        "scenario": {"scenario": "interference", "desired_snr_db": 29.0},
        "channel": {"snr_db": 29.0, "reference_power_db": 0.0},
        "experiment": {"x": "interferer_snr_db"},
    }),
    "features": merge(_COMMON, {
        "grid": {
            "scene": 13,
            "fd": [0.004, 0.006, 0.008, 0.010],
            "fi": [0.004, 0.008],
            "bandwidth": [10e6, 20e6],
        },
        "scenario": {"scenario": "periodic", "rat": "lte"},
        "channel": {"snr_db": 29.0},
        "experiment": {},
    }),
    "generate": merge(_COMMON, {
        "grid": {"scene": 10, "snr_db": [29.0]},
        "scenario": {"scenario": "random"},
        "record": {"store_iq": True},
        "stft": {"image": True},
        "experiment": {},
    }),
}


def resolve_config(kind: str, override: Mapping[str, Any] | None = None) -> dict[str, Any]:
    if kind not in DEFAULTS:
        raise InvalidSpec(f"unknown experiment {kind!r}; choose from {sorted(DEFAULTS)}")
    cfg = merge(DEFAULTS[kind], override or {})
    # a grid given in the override replaces the default grid as a whole
    if override and "grid" in override:
        cfg["grid"] = dict(override["grid"])
    cfg["grid"] = normalise_grid(cfg["grid"])
    cfg["grid"].setdefault("scene", [0])
    return cfg


def _route(axis: str) -> str:
    for stage, keys in (
        ("impair", CHANNEL_KEYS),
        ("record", RECORD_KEYS),
        ("spectrogram", STFT_KEYS),
        ("detect", DETECTOR_KEYS),
        ("eval", EVAL_KEYS),
    ):
        if axis in keys:
            return stage
    return "synth"


def build_template(cfg: Mapping[str, Any], until: str = "eval") -> list[Stage]:
    """The chain synth -> impair -> record -> spectrogram -> label [-> detect -> extract -> eval]."""
    axes = list(cfg["grid"])
    routed: dict[str, list[str]] = defaultdict(list)
    for a in axes:
        routed[_route(a)].append(a)
    base_seed = int(cfg["run"].get("base_seed", 0))
    channel_axes = tuple(routed["impair"])

    def noise_seed(point: dict[str, Any]) -> dict[str, Any]:
        return {"noise_seed": _seed(base_seed, int(point["scene"]), 1)}

    def source(point: dict[str, Any]) -> dict[str, Any]:
        return {"source": {a: point[a] for a in axes if a != "scene"}}

    preamble = cfg.get("preamble") or {}
    record_params = dict(cfg["record"])
    if preamble:
        record_params["preamble"] = preamble
    template = [
        Stage("synth", "synth", tuple(routed["synth"]), {**cfg["scenario"], "base_seed": base_seed}),
        Stage("impair", "impair", ("scene",) + channel_axes, dict(cfg["channel"]), ("synth",), noise_seed),
        Stage("record", "record", tuple(routed["record"]), record_params, ("synth", "impair")),
        Stage("spectrogram", "spectrogram", tuple(routed["spectrogram"]), dict(cfg["stft"]),
              ("synth", "impair", "record")),
        Stage("label", "label", (), {}, ("synth", "record", "spectrogram"), source),
    ]
    if until == "label":
        return template
    template += [
        Stage("detect", "detect", tuple(routed["detect"]), {"detector": dict(cfg["detector"])},
              ("spectrogram",)),
        Stage("extract", "extract", (), {}, ("spectrogram", "detect")),
        Stage("eval", "eval", tuple(routed["eval"]), dict(cfg["eval"]),
              ("synth", "record", "spectrogram", "label", "detect", "extract")),
    ]
    return template


@dataclass
class ExperimentResult:
    kind: str
    run: RunResult
    chains: list[dict[str, Any]]
    csv_path: Path | None = None
    figure_path: Path | None = None
    rows: list[dict[str, Any]] | None = None

    @property
    def complete(self) -> bool:
        return self.csv_path is not None


def plan(kind: str, cfg: Mapping[str, Any]):
    grid = ParameterGrid(cfg["grid"])
    template = build_template(cfg, until="label" if kind == "generate" else "eval")
    graph, chains = expand(grid, template)
    return graph, chains


def run_experiment(
    kind: str,
    override: Mapping[str, Any] | None = None,
    run_dir: str | Path | None = None,
    out_dir: str | Path | None = None,
    workers: int | None = None,
    figures: bool = True,
    max_tasks: int | None = None,
) -> ExperimentResult:
    """Expand, execute (resuming) and aggregate one experiment.

    Aggregate outputs are written only once every chain has finished or
    failed; an interrupted run (``max_tasks``) returns without them.
    """
    cfg = resolve_config(kind, override)
    root = resolve_run_dir(run_dir)
    out = Path(out_dir) if out_dir is not None else root
    out.mkdir(parents=True, exist_ok=True)
    graph, chains = plan(kind, cfg)
    n_workers = int(workers if workers is not None else cfg["run"].get("workers", 1))
    result = run(graph, root, n_workers, max_tasks=max_tasks)
    res = ExperimentResult(kind, result, chains)
    if any(e["status"] == "pending" for e in result.manifest):
        return res

    if kind == "generate":
        res.csv_path = export_dataset(root, chains, out)
        return res
    leaf = "eval"
    done = [c for c in chains if (task_dir(root, c["ids"][leaf]) / stages.EVAL).exists()]
    if kind == "features":
        rows = feature_rows(root, done, [a for a in cfg["grid"] if a != "scene"])
        csv_path = out / "features.csv"
        write_text_atomic(csv_path, stages.rows_to_csv(rows, FEATURE_STAT_COLUMNS))
        if figures:
            from .. import report

            res.figure_path = report.plot_feature_deviation(rows, out / "features.png")
    else:
        x = cfg["experiment"]["x"]
        rows = rate_rows(root, chains, x, float(cfg["eval"]["iou_threshold"]))
        csv_path = out / f"{kind}_sweep.csv"
        write_text_atomic(csv_path, stages.rows_to_csv(rows, rate_columns(x)))
        if figures:
            from .. import report

            res.figure_path = report.plot_rates(rows, x, out / f"{kind}_sweep.png")
    res.csv_path, res.rows = csv_path, rows
    return res


# --------------------------------------------------------------------------- aggregation


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def rate_columns(x: str) -> tuple[str, ...]:
    return (
        x, "images", "failed", "n_gt", "n_det", "matched", "correct", "detection_rate",
        "precision", "lte_detection_rate", "wifi_detection_rate", "ap_lte", "ap_wifi", "map",
    )


def rate_rows(root: Path, chains: Sequence[dict[str, Any]], x: str, iou_threshold: float) -> list[dict]:
    """Per x value: summed match counts, rates and per-class AP (failed chains count as misses)."""
    groups: dict[Any, list[dict[str, Any]]] = defaultdict(list)
    for c in chains:
        groups[c["point"][x]].append(c)
    rows = []
    for xv in sorted(groups):
        tot = defaultdict(int)
        per_class = {r: [0, 0] for r in ("lte", "wifi")}
        failed = 0
        gts: dict[str, list] = {}
        flat = []
        for c in groups[xv]:
            ev_path = task_dir(root, c["ids"]["eval"]) / stages.EVAL
            if not ev_path.exists():
                failed += 1
                continue
            ev = stages._load(ev_path)
            for k, v in ev["counts"].items():
                tot[k] += v
            for r, d in ev["per_class"].items():
                per_class[r][0] += d["n_gt"]
                per_class[r][1] += d["matched"]
            img = ev["image"]
            gts[img] = parse_voc((task_dir(root, c["ids"]["label"]) / stages.LABELS).read_text()).boxes
            flat += [(img, d) for d in stages.load_predictions(task_dir(root, c["ids"]["detect"]))]
        ap = {r.value: average_precision(flat, gts, r, iou_threshold) for r in (RatClass.LTE, RatClass.WIFI)}
        rows.append({
            x: repr(xv) if isinstance(xv, float) else xv,
            "images": len(groups[xv]) - failed,
            "failed": failed,
            **{k: tot[k] for k in ("n_gt", "n_det", "matched", "correct")},
            "detection_rate": _fmt(tot["matched"] / tot["n_gt"] if tot["n_gt"] else None),
            "precision": _fmt(tot["correct"] / tot["matched"] if tot["matched"] else None),
            "lte_detection_rate": _fmt(per_class["lte"][1] / per_class["lte"][0] if per_class["lte"][0] else None),
            "wifi_detection_rate": _fmt(per_class["wifi"][1] / per_class["wifi"][0] if per_class["wifi"][0] else None),
            "ap_lte": _fmt(ap["lte"]),
            "ap_wifi": _fmt(ap["wifi"]),
            "map": _fmt(mean_ap(ap)),
        })
    return rows


FEATURE_STAT_COLUMNS = (
    "feature", "axis", "value", "n", "median", "q1", "q3", "whisker_low", "whisker_high", "mean",
)
FEATURE_NAMES = ("b_w", "f_c", "fd", "fi")


def collect_deviations(root: Path, chains: Sequence[dict[str, Any]]) -> list[tuple[dict, dict]]:
    out = []
    for c in chains:
        ev = stages._load(task_dir(root, c["ids"]["eval"]) / stages.EVAL)
        out.append((c["point"], ev["deviations"]))
    return out


def feature_rows(root: Path, chains: Sequence[dict[str, Any]], group_axes: Sequence[str]) -> list[dict]:
    """Deviation boxplot stats per feature: pooled ("all") and per value of each grid axis."""
    data = collect_deviations(root, chains)
    rows = []
    for feat in FEATURE_NAMES:
        groups: list[tuple[str, Any, list[float]]] = [
            ("all", "", [v for _, dev in data for v in dev[feat]])
        ]
        for a in group_axes:
            for val in sorted({p[a] for p, _ in data}):
                groups.append((a, val, [v for p, dev in data if p[a] == val for v in dev[feat]]))
        for axis, val, sample in groups:
            st = deviation_stats(sample)
            row = {"feature": feat, "axis": axis, "value": repr(val) if isinstance(val, float) else val}
            if st is None:
                row["n"] = 0
            else:
                row.update({k: (v if k == "n" else repr(v)) for k, v in st.to_dict().items()})
            rows.append(row)
    return rows


def pooled_medians(rows: Sequence[dict[str, Any]]) -> dict[str, float]:
    return {r["feature"]: float(r["median"]) for r in rows if r["axis"] == "all" and r.get("median")}


# --------------------------------------------------------------------------- dataset export


def export_dataset(root: Path, chains: Sequence[dict[str, Any]], out: Path) -> Path:
    """Copy images, matrices, axes, VOC labels (and IQ when stored) into ``out``; write manifest.json."""
    for sub in ("images", "annotations", "iq"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(out)
    seen = set()
    for c in chains:
        ids = c["ids"]
        spec_dir = task_dir(root, ids["spectrogram"])
        label_dir = task_dir(root, ids["label"])
        if not label_dir.is_dir() or ids["spectrogram"] in seen:
            continue
        seen.add(ids["spectrogram"])
        img = ids["spectrogram"]
        for suffix in (".png", ".f32", ".axes.json"):
            src = spec_dir / (stages.SPEC_PREFIX + suffix)
            if src.exists():
                shutil.copyfile(src, out / "images" / (img + suffix))
        shutil.copyfile(label_dir / stages.LABELS, out / "annotations" / (img + ".xml"))
        rec_dir = task_dir(root, ids["record"])
        iq_ref = ""
        if (rec_dir / stages.PAYLOAD).exists():
            shutil.copyfile(rec_dir / stages.PAYLOAD, out / "iq" / (img + ".iq"))
            shutil.copyfile(rec_dir / "payload.meta.json", out / "iq" / (img + ".meta.json"))
            iq_ref = f"iq/{img}.iq"
        capture = stages._load(rec_dir / stages.CAPTURE)
        manifest.append(ManifestEntry(
            iq=iq_ref,
            spectrogram=f"images/{img}.f32",
            labels=f"annotations/{img}.xml",
            schedule=stages._load(task_dir(root, ids["synth"]) / stages.SCHEDULE),
            impairments=stages._load(task_dir(root, ids["impair"]) / stages.CHAIN),
            sync=capture["sync"],
        ))
    manifest.entries.sort(key=lambda e: e.spectrogram)
    path = out / "manifest.json"
    manifest.write(path)
    return path

