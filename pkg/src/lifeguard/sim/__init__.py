"""Deterministic simulation of a cluster of protocol nodes."""

from .experiments import (
    ExperimentPlan, expand_grid, interval_windows, load_plan, run_interval, run_plan,
    run_threshold, sim_config_from_plan,
)
from .kernel import SimConfig, Simulator, derive_seed, node_ids, simulate
from .log import SimEventLog

__all__ = [
    "ExperimentPlan", "SimConfig", "SimEventLog", "Simulator", "derive_seed", "expand_grid",
    "interval_windows", "load_plan", "node_ids", "run_interval", "run_plan", "run_threshold",
    "sim_config_from_plan", "simulate",
]
