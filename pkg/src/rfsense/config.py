"""TOML run configuration.

Sections: ``[run]`` (workers, base_seed), ``[grid]`` (one list per axis;
an integer ``scene = N`` means scenes ``0..N-1``), ``[scenario]``,
``[channel]``, ``[record]``, ``[preamble]``, ``[stft]``, ``[detector]``
and ``[eval]``.  Missing sections fall back to the experiment defaults.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any, Mapping

import tomli

from .errors import InvalidSpec

SECTIONS = ("run", "grid", "scenario", "channel", "record", "preamble", "stft", "detector", "eval")


def merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    """Recursive dict merge; lists and scalars in ``override`` replace."""
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load(path: str | os.PathLike) -> dict[str, Any]:
    with open(path, "rb") as fh:
        data = tomli.load(fh)
    unknown = sorted(set(data) - set(SECTIONS) - {"experiment"})
    if unknown:
        raise InvalidSpec(f"{Path(path).name}: unknown config sections {unknown}")
    return data


def normalise_grid(grid: Mapping[str, Any]) -> dict[str, list]:
    out = {}
    for name, values in grid.items():
        if name == "scene" and isinstance(values, int) and not isinstance(values, bool):
            values = list(range(values))
        elif not isinstance(values, list):
            values = [values]
        out[name] = values
    return out
