"""Task-graph dataset generation and experiment runner."""

from .dag import ParameterGrid, Stage, TaskGraph, TaskNode, expand, run
from .experiments import run_experiment

__all__ = ["ParameterGrid", "Stage", "TaskGraph", "TaskNode", "expand", "run", "run_experiment"]
