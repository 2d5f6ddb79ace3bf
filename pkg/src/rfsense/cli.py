"""Command line interface.

    rfsense generate --config grid.toml          labelled dataset (images + VOC + manifest)
    rfsense detect PREFIX... -o predictions.jsonl
    rfsense extract -p predictions.jsonl -a AXES_DIR -o features.csv
    rfsense eval -g ANNOTATIONS_DIR -p predictions.jsonl -o report.json
    rfsense sweep snr|interference|features      CSV + figure

The run directory defaults to ``$RFSENSE_RUN_DIR``.
"""

from __future__ import annotations

import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import click

from . import config as config_mod
from .annotate import export_predictions, import_predictions, parse_voc
from .detect import DetectorConfig, detect
from .errors import RfSenseError
from .evalmetrics import Counts, count_matches, evaluate, match
from .pipeline.dag import RUN_DIR_ENV, write_json_atomic, write_text_atomic
from .pipeline.experiments import run_experiment
from .pipeline.stages import feature_rows, rows_to_csv
from .spectro import load_spectrogram, read_axes

_SUFFIXES = (".axes.json", ".f32", ".png")


def _load_config(path: str | None) -> dict:
    return config_mod.load(path) if path else {}


def _prefix(path: str) -> Path:
    for s in _SUFFIXES:
        if path.endswith(s):
            return Path(path[: -len(s)])
    return Path(path)


run_dir_option = click.option(
    "--run-dir", type=click.Path(file_okay=False), envvar=RUN_DIR_ENV, required=True,
    help=f"Task output directory (default ${RUN_DIR_ENV}).",
)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """Spectrogram dataset generation, baseline detection and evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


def _finish(res) -> None:
    r = res.run
    click.echo(f"tasks: {len(r.manifest)} total, {len(r.executed)} executed, "
               f"{len(r.failed)} failed, {len(r.skipped)} skipped")
    if res.csv_path:
        click.echo(f"wrote {res.csv_path}")
    if res.figure_path:
        click.echo(f"wrote {res.figure_path}")
    if not res.complete:
        click.echo("run incomplete; re-run the same command to resume")


@main.command()
@click.option("-c", "--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@run_dir_option
@click.option("-o", "--out", type=click.Path(file_okay=False), help="Dataset directory (default RUN_DIR/dataset).")
@click.option("-j", "--workers", type=int, default=None)
def generate(config_path, run_dir, out, workers):
    """Synthesise, transmit, record and label every grid permutation."""
    out = out or str(Path(run_dir) / "dataset")
    res = run_experiment("generate", _load_config(config_path), run_dir, out, workers)
    _finish(res)


@main.command("detect")
@click.argument("spectrograms", nargs=-1, required=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
@click.option("-c", "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="TOML file whose [detector] section configures the detector.")
def detect_cmd(spectrograms, out, config_path):
    """Run the baseline detector on saved spectrograms (prefix or any of its files)."""
    cfg = DetectorConfig.from_dict(_load_config(config_path).get("detector", {}))
    items = []
    for s in spectrograms:
        prefix = _prefix(s)
        for d in detect(load_spectrogram(prefix), cfg):
            items.append((prefix.name, d))
    export_predictions(out, items)
    click.echo(f"{len(items)} detections in {len(spectrograms)} spectrograms -> {out}")


@main.command()
@click.option("-p", "--predictions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-a", "--axes-dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory holding <image>.axes.json sidecars.")
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
def extract(predictions, axes_dir, out):
    """Per-box features and per-spectrogram CWT/FI from predictions."""
    grouped, rejected = import_predictions(predictions)
    for r in rejected:
        click.echo(f"line {r.line}: rejected ({r.reason})", err=True)
    rows = []
    for image in sorted(grouped):
        axes = read_axes(Path(axes_dir) / f"{image}.axes.json")
        rows += feature_rows(image, grouped[image], axes)
    write_text_atomic(Path(out), rows_to_csv(rows))
    click.echo(f"{len(rows)} rows -> {out}")


@main.command("eval")
@click.option("-g", "--annotations", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory of VOC XML files named <image>.xml.")
@click.option("-p", "--predictions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
@click.option("--iou", "iou_threshold", type=float, default=0.5, show_default=True)
@click.option("--group-by", default="snr_db", show_default=True,
              help="VOC <source> field used for the per-sweep CSV (written next to --out).")
def eval_cmd(annotations, predictions, out, iou_threshold, group_by):
    """Detection rate, precision, AP/mAP for predictions against VOC ground truth."""
    gts, groups = {}, {}
    for path in sorted(Path(annotations).glob("*.xml")):
        ann = parse_voc(path.read_text())
        gts[path.stem] = ann.boxes
        if group_by in ann.source:
            groups[path.stem] = ann.source[group_by]
    preds, rejected = import_predictions(predictions)
    for r in rejected:
        click.echo(f"line {r.line}: rejected ({r.reason})", err=True)
    report = evaluate(gts, preds, iou_threshold)
    write_json_atomic(Path(out), report.to_dict())
    click.echo(json.dumps({"detection_rate": report.detection_rate, "precision": report.precision,
                           "map": report.map}))
    if groups:
        per = defaultdict(Counts)
        for img, gt in gts.items():
            det = preds.get(img, [])
            per[groups.get(img, "")] += count_matches(match(gt, det, iou_threshold), gt, det)
        rows = []
        for key in sorted(per, key=lambda k: (float(k) if _is_number(k) else float("inf"), k)):
            c = per[key]
            rows.append({group_by: key, "detection_rate": c.detection_rate, "precision": c.precision})
        csv_path = Path(out).with_suffix(".csv")
        write_text_atomic(csv_path, rows_to_csv(rows, (group_by, "detection_rate", "precision")))
        click.echo(f"per-{group_by} rates -> {csv_path}")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


@main.command()
@click.argument("kind", type=click.Choice(["snr", "interference", "features"]))
@click.option("-c", "--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@run_dir_option
@click.option("-o", "--out", type=click.Path(file_okay=False), help="Output directory (default RUN_DIR).")
@click.option("-j", "--workers", type=int, default=None)
@click.option("--figures/--no-figures", default=True, show_default=True)
def sweep(kind, config_path, run_dir, out, workers, figures):
    """Run an end-to-end experiment and write its CSV (and figure)."""
    res = run_experiment(kind, _load_config(config_path), run_dir, out, workers, figures)
    _finish(res)


def entry() -> None:
    try:
        main(standalone_mode=True)
    except RfSenseError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    entry()
