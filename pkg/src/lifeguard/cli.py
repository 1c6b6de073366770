"""Command-line entry points: ``agent``, ``sim`` and ``report``.

Configuration precedence, lowest first: built-in defaults, ``LIFEGUARD_*``
environment variables, ``--config`` file, command-line flags.
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import gzip
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import metrics
from .config import ENV_PREFIX, PRESETS, Config, ConfigError
from .sim.experiments import ExperimentPlan, expand_grid, load_plan, run_plan, sim_config_from_plan
from .sim.kernel import ANOMALY_MODES, SimConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    pass


# -- config files ------------------------------------------------------------

def read_config_file(path: str) -> Dict[str, Any]:
    """JSON object, or ``key = value`` lines with ``#`` comments."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{n}: expected key = value")
            data[key.strip()] = value.strip()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return data


def _config_fields():
    return [f for f in dataclasses.fields(Config)]


def build_config(args: argparse.Namespace, environ=None) -> tuple:
    """Returns (Config, extra settings such as bind/join from the file)."""
    environ = os.environ if environ is None else environ
    file_data = read_config_file(args.config) if args.config else {}
    extras = {k: file_data.pop(k) for k in ("bind", "join", "seed") if k in file_data}
    preset = args.preset or file_data.pop("preset", None) or environ.get(ENV_PREFIX + "PRESET") or "Lifeguard"
    file_data.pop("preset", None)
    if preset not in PRESETS:
        raise ConfigError(f"unknown configuration {preset!r}; expected one of {sorted(PRESETS)}")
    cfg = Config.preset(preset)
    cfg = Config.from_env(cfg, environ)
    cfg = Config.from_mapping(file_data, cfg)
    flags = {f.name: getattr(args, f.name) for f in _config_fields() if getattr(args, f.name) is not None}
    cfg = Config.from_mapping(flags, cfg)
    return cfg, extras


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (JSON object or key = value lines)")
    p.add_argument("--preset", choices=list(PRESETS), help="named configuration (default Lifeguard)")
    g = p.add_argument_group("protocol settings (durations in ms)")
    for f in _config_fields():
        flag = "--" + f.name.replace("_", "-")
        if f.type in (bool, "bool"):
            g.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        else:
            kind = int if f.type in (int, "int") else float
            g.add_argument(flag, dest=f.name, type=kind, default=None, metavar="N")


# -- agent -------------------------------------------------------------------

def cmd_agent(args: argparse.Namespace) -> int:
    from .agent import run_agent

    cfg, extras = build_config(args)
    bind = args.bind or extras.get("bind") or "127.0.0.1:7946"
    join: List[str] = []
    for j in (args.join or []) or _as_list(extras.get("join", [])):
        join += [x.strip() for x in str(j).split(",") if x.strip()]
    seed = args.seed if args.seed is not None else extras.get("seed")
    try:
        asyncio.run(run_agent(cfg, bind, join, args.duration, None if seed is None else int(seed)))
    except OSError as exc:
        print(f"lifeguard agent: cannot bind {bind}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _as_list(v) -> list:
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v] if v else []


# -- sim ---------------------------------------------------------------------

def group_name(plan: ExperimentPlan) -> str:
    cfg = plan.protocol_config()
    slug = plan.config.replace(" ", "")
    if cfg.lha_suspicion and (cfg.alpha, cfg.beta) != (5.0, 6.0):
        slug += f"_a{cfg.alpha:g}_b{cfg.beta:g}"
    return slug


def run_key(plan: ExperimentPlan, sim: SimConfig) -> str:
    import hashlib
    blob = json.dumps([plan.run_key(), dataclasses.asdict(sim)], sort_keys=True, default=list)
    return f"{plan.kind[0]}_C{plan.C}_D{plan.D}" + (f"_I{plan.I}" if plan.I is not None else "") \
        + f"_s{plan.seed}_" + hashlib.sha256(blob.encode()).hexdigest()[:10]


def _execute(job) -> Dict[str, Any]:
    plan, sim, log_path = job
    log = run_plan(plan, sim)
    if log_path is not None:
        with gzip.open(log_path, "wt") as fp:
            log.write(fp)
    return metrics.summarize(log).as_dict()


def _summary_from_dict(d: Dict[str, Any]) -> metrics.RunSummary:
    return metrics.RunSummary(**d)


def cmd_sim(args: argparse.Namespace) -> int:
    spec = load_plan(args.plan)
    if args.seed is not None:
        spec["seed"] = args.seed
    if args.anomaly_mode:
        spec["anomaly_mode"] = args.anomaly_mode
    plans = expand_grid(spec)
    sim = sim_config_from_plan(spec)
    out = Path(args.out)
    jobs, keys = [], []
    for plan in plans:
        gdir = out / group_name(plan)
        (gdir / "runs").mkdir(parents=True, exist_ok=True)
        key = run_key(plan, sim)
        keys.append((plan, gdir, key))
        if (gdir / "runs" / f"{key}.json").exists():
            continue  # finished earlier; resume skips it
        log_path = None
        if not args.no_logs:
            (gdir / "logs").mkdir(exist_ok=True)
            log_path = gdir / "logs" / f"{key}.ndjson.gz"
        jobs.append((plan, sim, log_path, gdir / "runs" / f"{key}.json"))

    def store(job, result):
        tmp = job[3].with_suffix(".tmp")
        tmp.write_text(json.dumps(result, sort_keys=True))
        tmp.replace(job[3])
        if not args.quiet:
            print(f"done {job[3].parent.parent.name}/{job[3].stem}", file=sys.stderr)

    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            for job, result in zip(jobs, pool.map(_execute, [j[:3] for j in jobs])):
                store(job, result)
    else:
        for job in jobs:
            store(job, _execute(job[:3]))

    groups: Dict[str, List] = {}
    for plan, gdir, key in keys:
        data = json.loads((gdir / "runs" / f"{key}.json").read_text())
        groups.setdefault(gdir.name, []).append((key, _summary_from_dict(data)))
    overall = {}
    for name, runs in sorted(groups.items()):
        write_group(out / name, runs)
        overall[name] = metrics.aggregate(r for _, r in runs)
    rows = metrics.report(overall, baseline="SWIM")
    metrics.write_csv(out / "report.csv", rows, metrics.REPORT_COLUMNS)
    metrics.write_summary(out / "summary.json", {"plan": spec, "groups": overall, "report": rows})
    print(metrics.format_table(rows))
    return EXIT_OK


def write_group(gdir: Path, runs) -> None:
    fp_rows, lat_rows, load_rows = [], [], []
    for key, r in runs:
        base = {"run": key, "config": r.config, "kind": r.plan.get("kind"), "C": r.plan.get("C"),
                "D": r.plan.get("D"), "I": r.plan.get("I"), "alpha": r.plan.get("alpha"),
                "beta": r.plan.get("beta"), "seed": r.plan.get("seed")}
        fp_rows.append(dict(base, fp=r.fp, fp_minus=r.fp_minus, suspect_events=r.suspect_events))
        load_rows.append(dict(base, messages=r.messages, bytes=r.bytes))
        for i, first in enumerate(r.first_detect):
            lat_rows.append(dict(base, sample=i, first_detect_s=first))
        for i, full in enumerate(r.full_dissem):
            lat_rows.append(dict(base, sample=i, full_dissem_s=full))
    head = ["run", "config", "kind", "C", "D", "I", "alpha", "beta", "seed"]
    metrics.write_csv(gdir / "false_positives.csv", fp_rows, head + ["fp", "fp_minus", "suspect_events"])
    metrics.write_csv(gdir / "latency.csv", lat_rows, head + ["sample", "first_detect_s", "full_dissem_s"])
    metrics.write_csv(gdir / "message_load.csv", load_rows, head + ["messages", "bytes"])
    metrics.write_summary(gdir / "summary.json", metrics.aggregate(r for _, r in runs))


# -- report ------------------------------------------------------------------

def load_group(path: str) -> Dict[str, Any]:
    p = Path(path)
    runs_dir = p / "runs"
    if runs_dir.is_dir():
        runs = [_summary_from_dict(json.loads(f.read_text())) for f in sorted(runs_dir.glob("*.json"))]
        if runs:
            return metrics.aggregate(runs)
    summary = p / "summary.json" if p.is_dir() else p
    if not summary.exists():
        raise CliError(f"no results found under {path}")
    return json.loads(summary.read_text())


def cmd_report(args: argparse.Namespace) -> int:
    stats: Dict[str, Any] = {}
    base_name = None
    if args.baseline:
        base_name = Path(args.baseline).name or "baseline"
        stats[base_name] = load_group(args.baseline)
    for c in args.candidate:
        name = Path(c).name
        if name in stats:
            name = c
        stats[name] = load_group(c)
    rows = metrics.report(stats, baseline=base_name or "")
    if base_name is None:
        print("warning: no baseline given; reporting absolute values only", file=sys.stderr)
    print(metrics.format_table(rows))
    if args.csv:
        metrics.write_csv(args.csv, rows, metrics.REPORT_COLUMNS)
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifeguard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("agent", help="run one protocol instance over UDP/TCP")
    p.add_argument("--bind", help="host:port to listen on (default 127.0.0.1:7946)")
    p.add_argument("--join", action="append", help="seed address(es), comma separated; repeatable")
    p.add_argument("--duration", type=float, help="exit after this many seconds")
    p.add_argument("--seed", type=int, help="seed for the protocol's random choices")
    _add_config_flags(p)
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("sim", help="run a simulation plan file")
    p.add_argument("--plan", required=True, help="JSON plan file")
    p.add_argument("--seed", type=int, help="override the plan's base seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--anomaly-mode", choices=list(ANOMALY_MODES))
    p.add_argument("--no-logs", action="store_true", help="skip writing event logs")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("report", help="baseline-relative tables from sim output")
    p.add_argument("--baseline", help="result directory of the baseline configuration")
    p.add_argument("--candidate", action="append", default=[], help="result directory; repeatable")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CliError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"lifeguard {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
