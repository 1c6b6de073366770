"""Threshold and Interval experiment runners plus plan-file expansion.

A Threshold run puts C seeded-random agents into an anomaly together for D ms
once the cluster has settled, then runs until every agent sees every other as
alive again or 120 s have elapsed. An Interval run repeats D ms of anomaly
and I ms of normal operation until 120 s have elapsed, then ends with the
anomalous period in progress (or the next one).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from ..config import PRESETS, Config, ConfigError
from .kernel import SimConfig, Simulator, derive_seed, node_ids
from .log import SimEventLog

THRESHOLD, INTERVAL = "threshold", "interval"
CONCURRENCY = (1, 4, 8, 12, 16, 20, 24, 28, 32)
DURATIONS = (128, 512, 2048, 8192, 16384, 32768)
INTERVALS = (1, 4, 16, 64, 256, 1024, 4096, 16384)
HORIZON_MS = 120_000


@dataclass(frozen=True)
class ExperimentPlan:
    kind: str
    C: int
    D: int
    I: Optional[int] = None
    config: str = "Lifeguard"
    alpha: float = 5.0
    beta: float = 6.0
    seed: int = 0
    repetitions: int = 1

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in (THRESHOLD, INTERVAL):
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        # C=0 is the no-anomaly control run.
        if self.C != 0 and self.C not in CONCURRENCY:
            raise ConfigError(f"C must be one of {CONCURRENCY}")
        if self.D not in DURATIONS:
            raise ConfigError(f"D must be one of {DURATIONS}")
        if kind == INTERVAL and self.I not in INTERVALS:
            raise ConfigError(f"I must be one of {INTERVALS}")
        if self.config not in PRESETS:
            raise ConfigError(f"unknown configuration {self.config!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be positive")

    def protocol_config(self) -> Config:
        # Configurations without LHA-Suspicion always use the fixed timeout.
        return Config.preset(self.config, alpha=self.alpha, beta=self.beta)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def run_key(self) -> str:
        cfg = self.protocol_config()
        d = dict(self.as_dict(), alpha=cfg.alpha, beta=cfg.beta)
        d.pop("repetitions")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def runs(self) -> Iterator["ExperimentPlan"]:
        """One single-repetition plan per repetition, with derived seeds."""
        for rep in range(self.repetitions):
            yield replace(self, seed=self.seed + rep, repetitions=1)


def choose_anomalous(ids: Sequence[str], count: int, seed: int) -> List[str]:
    rng = random.Random(derive_seed(seed, "anomaly"))
    return sorted(rng.sample(list(ids), count))


def interval_windows(start: int, D: int, I: int, horizon: int = HORIZON_MS) -> List[Tuple[int, int]]:
    windows = []
    t = start
    while True:
        windows.append((t, t + D))
        if t + D - start >= horizon:
            return windows
        t += D + I


def _simulator(plan: ExperimentPlan, sim: Optional[SimConfig]) -> Simulator:
    sim = replace(sim or SimConfig(), seed=plan.seed)
    return Simulator(sim, plan.protocol_config(), meta={"plan": plan.as_dict()})


def run_threshold(plan: ExperimentPlan, sim: Optional[SimConfig] = None) -> SimEventLog:
    if plan.kind != THRESHOLD:
        raise ConfigError("run_threshold needs a threshold plan")
    s = _simulator(plan, sim)
    start = s.sim.quiesce_ms
    end = start + plan.D
    for node in choose_anomalous(s.ids, plan.C, plan.seed):
        s.inject_anomaly(node, start, end)
    s.log.meta["experiment_start_us"] = round(start * 1000)
    return s.run(start + HORIZON_MS, stop_when_healthy_after_ms=end if plan.C else start)


def run_interval(plan: ExperimentPlan, sim: Optional[SimConfig] = None) -> SimEventLog:
    if plan.kind != INTERVAL:
        raise ConfigError("run_interval needs an interval plan")
    s = _simulator(plan, sim)
    start = round(s.sim.quiesce_ms)
    windows = interval_windows(start, plan.D, plan.I)
    for node in choose_anomalous(s.ids, plan.C, plan.seed):
        for a, b in windows:
            s.inject_anomaly(node, a, b)
    s.log.meta["experiment_start_us"] = start * 1000
    return s.run(windows[-1][1])


def run_plan(plan: ExperimentPlan, sim: Optional[SimConfig] = None) -> SimEventLog:
    return (run_threshold if plan.kind == THRESHOLD else run_interval)(plan, sim)


# -- plan files ---------------------------------------------------------------

PLAN_KEYS = {"kind", "C", "D", "I", "configs", "alphas", "betas", "reps", "seed",
             "nodes", "latency_ms", "loss", "quiesce_ms", "anomaly_mode"}


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def expand_grid(spec: Mapping[str, Any]) -> List[ExperimentPlan]:
    """Expand a plan-file mapping into single-run plans.

    Alpha/beta combinations only multiply configurations that use them; the
    others run once per (C, D, I, seed) with the fixed timeout.
    """
    unknown = set(spec) - PLAN_KEYS
    if unknown:
        raise ConfigError(f"unknown plan keys: {sorted(unknown)}")
    kind = str(spec.get("kind", THRESHOLD)).lower()
    Cs = _as_list(spec.get("C", [1]))
    Ds = _as_list(spec.get("D", [16384]))
    Is = _as_list(spec.get("I", [None])) if kind == INTERVAL else [None]
    configs = _as_list(spec.get("configs", ["SWIM", "Lifeguard"]))
    alphas = _as_list(spec.get("alphas", [5]))
    betas = _as_list(spec.get("betas", [6]))
    reps = int(spec.get("reps", 1))
    seed = int(spec.get("seed", 0))
    plans = []
    for config in configs:
        if config not in PRESETS:
            raise ConfigError(f"unknown configuration {config!r}")
        ab = list(itertools.product(alphas, betas)) if PRESETS[config]["lha_suspicion"] else [(5, 1)]
        for (a, b), C, D, I, rep in itertools.product(ab, Cs, Ds, Is, range(reps)):
            plans.append(ExperimentPlan(kind, int(C), int(D), None if I is None else int(I),
                                        config, float(a), float(b), seed + rep))
    return plans


def sim_config_from_plan(spec: Mapping[str, Any]) -> SimConfig:
    kw: Dict[str, Any] = {}
    if "nodes" in spec:
        kw["node_count"] = int(spec["nodes"])
    if "latency_ms" in spec:
        kw["latency_ms"] = tuple(float(x) for x in spec["latency_ms"])
    if "loss" in spec:
        kw["loss"] = float(spec["loss"])
    if "quiesce_ms" in spec:
        kw["quiesce_ms"] = float(spec["quiesce_ms"])
    if "anomaly_mode" in spec:
        kw["anomaly_mode"] = str(spec["anomaly_mode"])
    return SimConfig(**kw)


def load_plan(path) -> Dict[str, Any]:
    with open(path) as fp:
        spec = json.load(fp)
    if not isinstance(spec, dict):
        raise ConfigError("plan file must hold a JSON object")
    return spec


__all__ = [
    "ExperimentPlan", "run_threshold", "run_interval", "run_plan", "expand_grid",
    "interval_windows", "choose_anomalous", "load_plan", "sim_config_from_plan",
    "node_ids", "THRESHOLD", "INTERVAL", "HORIZON_MS",
]
