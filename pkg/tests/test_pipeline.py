import csv
import json

import pytest

from rfsense.annotate import DatasetManifest
from rfsense.errors import EmptyAxis, InvalidSpec, TaskFailed
from rfsense.pipeline import dag
from rfsense.pipeline.dag import ParameterGrid, Stage, TaskGraph, TaskNode, expand, resolve_run_dir, run
from rfsense.pipeline.experiments import plan, pooled_medians, resolve_config, run_experiment

TEMPLATE = [
    Stage("a", "synth", ("scene",)),
    Stage("b", "impair", ("snr_db",), {"k": 1}, ("a",)),
    Stage("c", "record", (), {}, ("a", "b")),
]


@pytest.fixture
def fake_tasks(monkeypatch):
    """Replace three task kinds with cheap functions that log their calls."""
    calls = []

    def make(kind):
        def fn(params, inputs, out):
            calls.append(kind)
            if params.get("fail") == kind:
                raise TaskFailed(f"{kind} gave up")
            if params.get("boom") == kind:
                raise ValueError("bug")
            upstream = "".join((p / "value.txt").read_text() for p in inputs)
            (out / "value.txt").write_text(f"{kind}({json.dumps(params, sort_keys=True)}|{upstream})")
        return fn

    for kind in ("synth", "impair", "record"):
        monkeypatch.setitem(dag._REGISTRY, kind, make(kind))
    return calls


def test_grid_two_by_two_gives_four_chains():
    graph, chains = expand(ParameterGrid({"scene": [0, 1], "snr_db": [5, 10]}), TEMPLATE)
    assert len(chains) == 4
    assert len({c["ids"]["c"] for c in chains}) == 4
    assert [len(w) for w in graph.waves()] == [2, 4, 4]


def test_single_value_grid():
    graph, chains = expand(ParameterGrid({"scene": 3, "snr_db": 7}), TEMPLATE)
    assert len(chains) == 1 and len(graph) == 3


def test_shared_upstream_is_one_node():
    graph, chains = expand(ParameterGrid({"scene": [0], "snr_db": [5, 10, 15]}), TEMPLATE)
    assert len({c["ids"]["a"] for c in chains}) == 1
    assert sum(n.kind == "synth" for n in graph.nodes.values()) == 1


def test_empty_axis_and_repeats():
    with pytest.raises(EmptyAxis):
        ParameterGrid({"snr_db": []})
    with pytest.raises(InvalidSpec):
        ParameterGrid({"snr_db": [1, 1]})


def test_axes_must_be_consumed():
    with pytest.raises(InvalidSpec):
        expand(ParameterGrid({"scene": [0], "snr_db": [1], "colour": ["red"]}), TEMPLATE)
    with pytest.raises(InvalidSpec):
        expand(ParameterGrid({"scene": [0]}), TEMPLATE)


def test_leaf_must_depend_on_every_axis():
    template = [Stage("a", "synth", ("scene",)), Stage("b", "impair", ("snr_db",)), Stage("c", "record", (), {}, ("a",))]
    with pytest.raises(InvalidSpec):
        expand(ParameterGrid({"scene": [0], "snr_db": [1, 2]}), template)


def test_ids_are_content_addresses():
    a = TaskNode("synth", {"x": (1, 2), "y": {"b": 1, "a": 2}})
    b = TaskNode("synth", {"y": {"a": 2, "b": 1}, "x": [1, 2]})
    assert a.id == b.id and len(a.id) == 64
    assert TaskNode("synth", {"x": [1, 3]}).id != a.id
    with pytest.raises(InvalidSpec):
        TaskNode("train", {})
    with pytest.raises(InvalidSpec):
        TaskGraph([TaskNode("impair", {}, ("0" * 64,))])


def test_changes_propagate_downstream():
    cfg = resolve_config("snr", {"grid": {"scene": 1, "snr_db": [10.0]}})
    _, (base,) = plan("snr", cfg)
    cfg2 = resolve_config("snr", {"grid": {"scene": 1, "snr_db": [11.0]}})
    _, (moved,) = plan("snr", cfg2)
    assert base["ids"]["synth"] == moved["ids"]["synth"]
    for stage in ("impair", "record", "spectrogram", "label", "detect", "extract", "eval"):
        assert base["ids"][stage] != moved["ids"][stage]
    cfg3 = resolve_config("snr", {"grid": {"scene": 1, "snr_db": [10.0]}, "scenario": {"n_frames": [2, 3]}})
    _, (other,) = plan("snr", cfg3)
    assert set(other["ids"].values()).isdisjoint(base["ids"].values())


def test_rerun_executes_nothing(tmp_path, fake_tasks):
    graph, _ = expand(ParameterGrid({"scene": [0, 1], "snr_db": [5, 10]}), TEMPLATE)
    first = run(graph, tmp_path)
    assert len(first.executed) == len(graph) == len(fake_tasks)
    second = run(graph, tmp_path)
    assert second.executed == [] and len(fake_tasks) == len(graph)
    assert second.manifest == first.manifest
    assert json.loads((tmp_path / "manifest.json").read_text()) == first.manifest


def test_interrupted_run_resumes_to_the_same_outputs(tmp_path, fake_tasks):
    graph, _ = expand(ParameterGrid({"scene": [0, 1, 2], "snr_db": [5, 10]}), TEMPLATE)
    part = run(graph, tmp_path / "r", max_tasks=4)
    assert len(part.executed) == 4
    assert sum(e["status"] == "pending" for e in part.manifest) == len(graph) - 4
    rest = run(graph, tmp_path / "r")
    assert len(rest.executed) == len(graph) - 4
    whole = run(graph, tmp_path / "w")
    assert rest.manifest == whole.manifest


def test_failure_skips_only_descendants(tmp_path, fake_tasks):
    graph = TaskGraph()
    ok = graph.add(TaskNode("synth", {"n": 0}))
    bad = graph.add(TaskNode("synth", {"n": 1, "fail": "synth"}))
    graph.add(TaskNode("impair", {}, (ok.id,)))
    child = graph.add(TaskNode("impair", {}, (bad.id,)))
    grandchild = graph.add(TaskNode("record", {}, (child.id,)))
    res = run(graph, tmp_path)
    assert res.failed.keys() == {bad.id}
    assert set(res.skipped) == {child.id, grandchild.id}
    assert res.status(bad.id) == "failed" and res.status(grandchild.id) == "skipped"
    assert sum(e["status"] == "done" for e in res.manifest) == 2
    assert "gave up" in json.loads((tmp_path / "failed" / f"{bad.id}.json").read_text())["error"]
    # a failed task is retried on the next run rather than cached
    again = run(graph, tmp_path)
    assert again.failed.keys() == {bad.id}


def test_unexpected_error_aborts_without_committing(tmp_path, fake_tasks):
    graph = TaskGraph([TaskNode("synth", {"boom": "synth"})])
    with pytest.raises(RuntimeError, match="ValueError"):
        run(graph, tmp_path)
    assert not any((tmp_path / "tasks").iterdir())
    assert not (tmp_path / "tmp").exists()


def test_stale_temporary_output_is_discarded(tmp_path, fake_tasks):
    graph = TaskGraph([TaskNode("synth", {})])
    (tmp_path / "tmp" / "junk.123").mkdir(parents=True)
    res = run(graph, tmp_path)
    assert len(res.executed) == 1
    assert not (tmp_path / "tmp").exists()
    assert {p.name for p in (tmp_path / "tasks").iterdir()} == set(graph.nodes)


def test_run_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(dag.RUN_DIR_ENV, str(tmp_path))
    assert resolve_run_dir(None) == tmp_path
    monkeypatch.delenv(dag.RUN_DIR_ENV)
    with pytest.raises(InvalidSpec):
        resolve_run_dir(None)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_small_snr_sweep(tmp_path):
    res = run_experiment("snr", {"grid": {"scene": 2, "snr_db": [10.0, 29.0]}}, tmp_path / "run", tmp_path / "out")
    assert res.complete and res.figure_path.exists()
    rows = read_csv(res.csv_path)
    assert [r["snr_db"] for r in rows] == ["10.0", "29.0"]
    assert {"detection_rate", "precision", "ap_lte", "ap_wifi", "map", "failed"} <= set(rows[0])
    assert all(int(r["images"]) == 2 and int(r["n_gt"]) > 0 for r in rows)
    again = run_experiment("snr", {"grid": {"scene": 2, "snr_db": [10.0, 29.0]}}, tmp_path / "run", tmp_path / "out2",
                           figures=False)
    assert again.run.executed == []
    assert again.csv_path.read_bytes() == res.csv_path.read_bytes()


def test_lost_preamble_counts_as_failed_images(tmp_path):
    res = run_experiment(
        "snr",
        {"grid": {"scene": 1, "snr_db": [-40.0, 20.0]}, "record": {"max_retries": 0}},
        tmp_path / "run", tmp_path, figures=False,
    )
    rows = {r["snr_db"]: r for r in read_csv(res.csv_path)}
    assert rows["-40.0"]["failed"] == "1" and rows["-40.0"]["images"] == "0"
    assert rows["20.0"]["failed"] == "0"
    assert len(res.run.failed) == 1 and len(res.run.skipped) == 5


def test_small_feature_study(tmp_path):
    res = run_experiment(
        "features",
        {"grid": {"scene": 2, "fd": [0.006], "fi": [0.008], "bandwidth": [10e6, 20e6]}},
        tmp_path / "run", tmp_path, figures=False,
    )
    rows = read_csv(res.csv_path)
    med = pooled_medians(rows)
    assert set(med) == {"b_w", "f_c", "fd", "fi"}
    assert {r["axis"] for r in rows} == {"all", "fd", "fi", "bandwidth"}
    assert med["b_w"] <= 2.0 and med["fd"] <= 10.0


def test_generate_exports_a_valid_dataset(tmp_path):
    res = run_experiment("generate", {"grid": {"scene": 2}}, tmp_path / "run", tmp_path / "ds")
    m = DatasetManifest.read(res.csv_path)
    assert len(m.entries) == 2
    assert m.validate() == []
    assert len(list((tmp_path / "ds" / "images").glob("*.png"))) == 2
    assert len(list((tmp_path / "ds" / "iq").glob("*.iq"))) == 2


def test_workers_do_not_change_results(tmp_path):
    over = {"grid": {"scene": 2, "snr_db": [15.0]}}
    one = run_experiment("snr", over, tmp_path / "one", tmp_path / "o1", workers=1, figures=False)
    two = run_experiment("snr", over, tmp_path / "two", tmp_path / "o2", workers=2, figures=False)
    assert one.run.manifest == two.run.manifest
    assert one.csv_path.read_bytes() == two.csv_path.read_bytes()


def test_unknown_experiment():
    with pytest.raises(InvalidSpec):
        resolve_config("training")
