"""Content-addressed task graphs: grid expansion and resumable execution.

A task's id is the SHA-256 of its kind, its parameters and its parents'
ids, so identical upstream work collapses onto one node and any upstream
change propagates to every descendant id.  Each task writes into its own
directory ``<run_dir>/tasks/<id>``; the directory is filled under a
temporary name and renamed into place, so its existence means the task
finished.  Re-running a graph skips every committed task.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import shutil
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from ..errors import EmptyAxis, InvalidSpec, TaskFailed

log = logging.getLogger(__name__)

KINDS = ("synth", "impair", "record", "spectrogram", "label", "detect", "extract", "eval")
RUN_DIR_ENV = "RFSENSE_RUN_DIR"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def task_id(kind: str, params: Mapping[str, Any], inputs: Sequence[str]) -> str:
    payload = canonical_json({"kind": kind, "params": dict(params), "inputs": list(inputs)})
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class TaskNode:
    kind: str
    params: dict[str, Any]
    inputs: tuple[str, ...] = ()
    id: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown task kind {self.kind!r}")
        # round-trip through JSON so ids never depend on tuple/list or int/float spelling
        params = json.loads(canonical_json(self.params))
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "id", task_id(self.kind, params, self.inputs))

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "kind": self.kind, "params": self.params, "inputs": list(self.inputs)}


class TaskGraph:
    """A DAG of TaskNodes keyed by id; adding an existing node is a no-op."""

    def __init__(self, nodes: Iterable[TaskNode] = ()):
        self.nodes: dict[str, TaskNode] = {}
        for n in nodes:
            self.add(n)

    def add(self, node: TaskNode) -> TaskNode:
        for parent in node.inputs:
            if parent not in self.nodes:
                raise InvalidSpec(f"{node.kind} task depends on unknown task {parent[:12]}")
        return self.nodes.setdefault(node.id, node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, tid: str) -> bool:
        return tid in self.nodes

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {t: [] for t in self.nodes}
        for n in self.nodes.values():
            for p in n.inputs:
                out[p].append(n.id)
        return out

    def leaves(self) -> list[str]:
        ch = self.children()
        return sorted(t for t, c in ch.items() if not c)

    def waves(self) -> list[list[str]]:
        """Topological levels; ids sorted inside each level for determinism."""
        depth: dict[str, int] = {}
        # parents are always added before children, so insertion order is topological
        for tid, n in self.nodes.items():
            depth[tid] = 1 + max((depth[p] for p in n.inputs), default=-1)
        levels: dict[int, list[str]] = {}
        for tid, d in depth.items():
            levels.setdefault(d, []).append(tid)
        return [sorted(levels[d]) for d in sorted(levels)]

    def descendants(self, tid: str) -> set[str]:
        ch = self.children()
        seen: set[str] = set()
        stack = list(ch[tid])
        while stack:
            t = stack.pop()
            if t not in seen:
                seen.add(t)
                stack.extend(ch[t])
        return seen


@dataclass(frozen=True)
class ParameterGrid:
    """Named value lists; one permutation per element of their product."""

    axes: dict[str, tuple]

    def __post_init__(self):
        axes = {}
        for name, values in self.axes.items():
            values = tuple(values) if isinstance(values, (list, tuple)) else (values,)
            if not values:
                raise EmptyAxis(f"grid axis {name!r} has no values")
            keys = [canonical_json(v) for v in values]
            if len(set(keys)) != len(keys):
                raise InvalidSpec(f"grid axis {name!r} repeats a value")
            axes[name] = values
        object.__setattr__(self, "axes", axes)

    @property
    def size(self) -> int:
        n = 1
        for v in self.axes.values():
            n *= len(v)
        return n

    def permutations(self) -> list[dict[str, Any]]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*self.axes.values())]


@dataclass(frozen=True)
class Stage:
    """One step of a chain template.

    ``axes`` names the grid axes this stage's parameters take; ``params``
    are fixed; ``derive`` may add parameters computed from the permutation;
    ``inputs`` names earlier stages whose nodes feed this one.
    """

    name: str
    kind: str
    axes: tuple[str, ...] = ()
    params: dict[str, Any] = field(default_factory=dict)
    inputs: tuple[str, ...] = ()
    derive: Callable[[dict[str, Any]], dict[str, Any]] | None = None


def expand(grid: ParameterGrid, template: Sequence[Stage]) -> tuple[TaskGraph, list[dict[str, Any]]]:
    """Build the graph with one chain per grid permutation.

    Returns the graph and, per permutation, a dict holding the permutation
    (``"point"``) and the node id of every stage.  Raises if some axis is
    consumed by no stage or if the leaf count differs from the grid size.
    """
    names = [s.name for s in template]
    if len(set(names)) != len(names):
        raise InvalidSpec("stage names must be unique")
    used = {a for s in template for a in s.axes}
    unused = sorted(set(grid.axes) - used)
    if unused:
        raise InvalidSpec(f"grid axes {unused} are not consumed by any stage")
    unknown = sorted(used - set(grid.axes))
    if unknown:
        raise InvalidSpec(f"stages use axes {unknown} that the grid does not define")

    graph = TaskGraph()
    chains = []
    for point in grid.permutations():
        ids: dict[str, str] = {}
        for s in template:
            params = dict(s.params)
            params.update({a: point[a] for a in s.axes})
            if s.derive is not None:
                params.update(s.derive(point))
            for ref in s.inputs:
                if ref not in ids:
                    raise InvalidSpec(f"stage {s.name!r} depends on later or unknown stage {ref!r}")
            node = graph.add(TaskNode(s.kind, params, tuple(ids[r] for r in s.inputs)))
            ids[s.name] = node.id
        chains.append({"point": point, "ids": ids})

    leaf = template[-1].name
    n_leaves = len({c["ids"][leaf] for c in chains})
    if n_leaves != grid.size:
        raise InvalidSpec(
            f"grid of {grid.size} permutations produced {n_leaves} distinct leaves; "
            "the last stage must depend on every axis"
        )
    return graph, chains


# --------------------------------------------------------------------------- execution

TaskFn = Callable[[dict[str, Any], list[Path], Path], None]
_REGISTRY: dict[str, TaskFn] = {}


def register(kind: str) -> Callable[[TaskFn], TaskFn]:
    if kind not in KINDS:
        raise InvalidSpec(f"unknown task kind {kind!r}")

    def deco(fn: TaskFn) -> TaskFn:
        _REGISTRY[kind] = fn
        return fn

    return deco


def resolve_run_dir(run_dir: str | os.PathLike | None) -> Path:
    if run_dir is None:
        run_dir = os.environ.get(RUN_DIR_ENV)
    if not run_dir:
        raise InvalidSpec(f"no run directory given and ${RUN_DIR_ENV} is unset")
    return Path(run_dir)


def task_dir(run_dir: Path, tid: str) -> Path:
    return run_dir / "tasks" / tid


def is_done(run_dir: Path, tid: str) -> bool:
    return task_dir(run_dir, tid).is_dir()


def _failure_path(run_dir: Path, tid: str) -> Path:
    return run_dir / "failed" / f"{tid}.json"


def _execute(node: TaskNode, run_dir: str) -> tuple[str, str, str | None]:
    """Run one task in a worker; returns (id, status, error)."""
    from . import stages  # noqa: F401  (registers the task functions in this process)

    root = Path(run_dir)
    final = task_dir(root, node.id)
    if final.is_dir():
        return node.id, "cached", None
    tmp = root / "tmp" / f"{node.id}.{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        (tmp / "task.json").write_text(json.dumps(node.to_dict(), indent=1, sort_keys=True))
        inputs = [task_dir(root, p) for p in node.inputs]
        _REGISTRY[node.kind](node.params, inputs, tmp)
    except TaskFailed as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        return node.id, "failed", str(exc)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        return node.id, "error", traceback.format_exc()
    try:
        os.replace(tmp, final)
    except OSError:
        # another worker committed the same id first
        shutil.rmtree(tmp, ignore_errors=True)
        if not final.is_dir():
            raise
    return node.id, "done", None


def file_hashes(directory: Path) -> dict[str, str]:
    out = {}
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            out[p.relative_to(directory).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@dataclass
class RunResult:
    manifest: list[dict[str, Any]]
    executed: list[str]
    failed: dict[str, str]
    skipped: list[str]

    def status(self, tid: str) -> str:
        for entry in self.manifest:
            if entry["id"] == tid:
                return entry["status"]
        raise KeyError(tid)


def run(
    graph: TaskGraph,
    run_dir: str | os.PathLike | None = None,
    workers: int = 1,
    max_tasks: int | None = None,
) -> RunResult:
    """Execute every unfinished task, wave by wave.

    A task whose registered function raises ``TaskFailed`` is recorded as
    failed and its descendants are skipped; unrelated chains continue.
    Any other exception aborts the run after the current wave.
    ``max_tasks`` stops after that many executions (used to simulate an
    interrupted run).  The manifest, sorted by id, is written to
    ``<run_dir>/manifest.json``.
    """
    from . import stages  # noqa: F401

    root = resolve_run_dir(run_dir)
    (root / "tasks").mkdir(parents=True, exist_ok=True)
    stale = root / "tmp"
    if stale.exists():
        shutil.rmtree(stale)

    blocked: set[str] = set()
    failed: dict[str, str] = {}
    executed: list[str] = []
    budget = max_tasks
    interrupted = False
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for wave in graph.waves():
            todo = [
                graph.nodes[t]
                for t in wave
                if t not in blocked and not is_done(root, t)
            ]
            if budget is not None:
                todo, rest = todo[:budget], todo[budget:]
                budget -= len(todo)
                interrupted = interrupted or bool(rest)
            if pool is None:
                results = [_execute(n, str(root)) for n in todo]
            else:
                results = list(pool.map(_execute, todo, [str(root)] * len(todo)))
            errors = []
            for tid, status, err in results:
                if status == "done":
                    executed.append(tid)
                    _failure_path(root, tid).unlink(missing_ok=True)
                elif status in ("failed", "error"):
                    failed[tid] = err or status
                    blocked |= graph.descendants(tid)
                    fp = _failure_path(root, tid)
                    fp.parent.mkdir(exist_ok=True)
                    fp.write_text(json.dumps({"id": tid, "status": status, "error": err}))
                    if status == "error":
                        errors.append((tid, err))
            if errors:
                raise RuntimeError(f"task {errors[0][0][:12]} raised:\n{errors[0][1]}")
            if interrupted or budget == 0:
                break
    finally:
        if pool is not None:
            pool.shutdown()
        shutil.rmtree(stale, ignore_errors=True)

    manifest = build_manifest(graph, root, failed, blocked)
    write_json_atomic(root / "manifest.json", manifest)
    return RunResult(manifest, executed, failed, sorted(blocked))


def build_manifest(
    graph: TaskGraph, root: Path, failed: Mapping[str, str] | None = None, blocked: Iterable[str] = ()
) -> list[dict[str, Any]]:
    failed = failed or {}
    blocked = set(blocked)
    entries = []
    for tid in sorted(graph.nodes):
        node = graph.nodes[tid]
        entry = node.to_dict()
        if is_done(root, tid):
            entry["status"] = "done"
            entry["files"] = file_hashes(task_dir(root, tid))
        elif tid in failed:
            entry["status"] = "failed"
            entry["error"] = failed[tid].strip().splitlines()[-1]
        elif tid in blocked:
            entry["status"] = "skipped"
        else:
            entry["status"] = "pending"
        entries.append(entry)
    return entries


def write_json_atomic(path: Path, obj: Any) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


def write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
