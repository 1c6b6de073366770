"""Evaluation quantities computed from simulator event logs.

All functions are pure over a :class:`~lifeguard.sim.log.SimEventLog` and
ignore records stamped before the end of the quiesce window.

* False positives: dead confirmations about members that never had an
  anomaly, counted once per observing node. The "minus" variant keeps only
  those raised by nodes that never had one either.
* Detection latency: per anomalous member, time from its first anomaly start
  to the first dead confirmation by another node, and to the moment the last
  healthy node confirmed it.
* Message load: one message per envelope, bytes as encoded.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .core.timeouts import gossip_budget
from .sim.log import RECV, SEND, STATE, SimEventLog, gc_paused
from .types import MsgKind, State

_PING = int(MsgKind.PING)
_PUSH_PULL = int(MsgKind.PUSH_PULL)
_SUSPECT = int(State.SUSPECT)


def percentile(values: Sequence[float], p: float) -> Optional[float]:
    """Nearest-rank percentile: the ceil(p*N)-th smallest value (1-based)."""
    if not values:
        return None
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    ordered = sorted(values)
    rank = max(1, math.ceil(round(p * len(ordered), 9)))
    return ordered[rank - 1]


def pct_of_baseline(value: Optional[float], baseline: Optional[float]) -> Optional[float]:
    if value is None or baseline is None:
        return None
    if baseline == 0:
        return 100.0 if value == 0 else math.inf
    return 100.0 * value / baseline


@dataclass
class FalsePositiveStats:
    fp: int = 0
    fp_minus: int = 0
    fp_pct_of_baseline: Optional[float] = None
    fp_minus_pct_of_baseline: Optional[float] = None
    # suspicion events under the same rules, for inspection only
    suspect_events: int = 0


@dataclass
class LatencyStats:
    first_median: Optional[float] = None
    first_p99: Optional[float] = None
    first_p999: Optional[float] = None
    full_median: Optional[float] = None
    full_p99: Optional[float] = None
    full_p999: Optional[float] = None
    first_samples: List[float] = field(default_factory=list)
    full_samples: List[float] = field(default_factory=list)
    undetected: int = 0

    @classmethod
    def from_samples(cls, first: Sequence[float], full: Sequence[float],
                     undetected: int = 0) -> "LatencyStats":
        return cls(percentile(first, 0.5), percentile(first, 0.99), percentile(first, 0.999),
                   percentile(full, 0.5), percentile(full, 0.99), percentile(full, 0.999),
                   list(first), list(full), undetected)


def count_false_positives(log: SimEventLog, anomaly_set: Optional[Iterable[str]] = None) -> FalsePositiveStats:
    anomalous = set(log.anomalous if anomaly_set is None else anomaly_set)
    q = log.quiesce_us
    stats = FalsePositiveStats()
    for r in log.records:
        if r[0] != STATE or r[1] < q or r[3] in anomalous or r[4] == r[5]:
            continue  # same-state records only move the incarnation
        if r[5] == "dead":
            stats.fp += 1
            if r[2] not in anomalous:
                stats.fp_minus += 1
        elif r[5] == "suspect":
            stats.suspect_events += 1
    return stats


def detection_samples(log: SimEventLog,
                      windows: Optional[Mapping[str, Sequence[Sequence[int]]]] = None
                      ) -> Tuple[List[float], List[float], int]:
    """Per-anomaly (first, full) latencies in seconds plus the undetected count."""
    windows = log.anomaly_windows if windows is None else windows
    if not windows:
        return [], [], 0
    starts = {m: min(w[0] for w in ws) for m, ws in windows.items()}
    healthy = [m for m in log.nodes if m not in starts]
    # first dead confirmation about each anomalous member, per observer
    seen: Dict[str, Dict[str, int]] = {m: {} for m in starts}
    for r in log.records:
        if r[0] != STATE or r[5] != "dead":
            continue
        member, observer, t = r[3], r[2], r[1]
        per = seen.get(member)
        if per is None or observer == member or t < starts[member] or observer in per:
            continue
        per[observer] = t
    first, full, undetected = [], [], 0
    for member in sorted(starts):
        per = seen[member]
        if not per:
            undetected += 1
            continue
        s = starts[member]
        first.append((min(per.values()) - s) / 1e6)
        if healthy and all(h in per for h in healthy):
            full.append((max(per[h] for h in healthy) - s) / 1e6)
    return first, full, undetected


def detection_latencies(log: SimEventLog,
                        windows: Optional[Mapping[str, Sequence[Sequence[int]]]] = None) -> LatencyStats:
    first, full, undetected = detection_samples(log, windows)
    return LatencyStats.from_samples(first, full, undetected)


def message_load(log: SimEventLog) -> Tuple[int, int]:
    q = log.quiesce_us
    messages = size = 0
    for r in log.records:
        if r[0] == SEND and r[1] >= q:
            messages += 1
            size += r[7]
    return messages, size


@dataclass
class BuddyScan:
    pings: int = 0
    pings_to_suspects: int = 0
    violations: int = 0
    max_suspect_transmissions: int = 0
    bound: int = 0

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.max_suspect_transmissions <= self.bound


def scan_buddy_and_budget(log: SimEventLog, k: Optional[int] = None,
                          retransmit_mult: Optional[float] = None) -> BuddyScan:
    """Check the buddy rule and the per-node suspicion gossip bound.

    Every ping whose sender held the destination as suspect must carry that
    suspicion. Suspect updates drawn from the gossip queue (the forced buddy
    copy and anti-entropy snapshots aside) are tallied per
    (sender, member, incarnation) against (K+1) times the retransmit budget.
    """
    proto = log.meta.get("protocol", {})
    k = proto.get("suspicion_k", 3) if k is None else k
    lam = proto.get("retransmit_mult", 4) if retransmit_mult is None else retransmit_mult
    n = len(log.nodes)
    scan = BuddyScan(bound=(k + 1) * gossip_budget(n, lam))
    view: Dict[Tuple[str, str], Tuple[str, int]] = {}
    counts: Dict[Tuple[str, str, int], int] = {}
    buddy_on = proto.get("buddy", True)
    with gc_paused():
        for r in log.records:
            tag = r[0]
            if tag == STATE:
                view[(r[2], r[3])] = (r[5], r[6])
            elif tag == SEND:
                src, kind, updates, forced = r[2], r[5], r[8], r[9]
                if kind == _PING:
                    scan.pings += 1
                    v = view.get((src, r[3]))
                    if v is not None and v[0] == "suspect":
                        scan.pings_to_suspects += 1
                        if buddy_on:
                            first = updates[0] if forced else None
                            if not (first and first[0] == _SUSPECT and first[1] == r[3] and first[2] == v[1]):
                                scan.violations += 1
                if kind == _PUSH_PULL or not updates:
                    continue
                for u in (updates[1:] if forced else updates):
                    if u[0] == _SUSPECT:
                        key = (src, u[1], u[2])
                        counts[key] = counts.get(key, 0) + 1
    scan.max_suspect_transmissions = max(counts.values(), default=0)
    return scan


# -- per-run summaries and reports -------------------------------------------

@dataclass
class RunSummary:
    config: str
    plan: Dict[str, Any]
    fp: int
    fp_minus: int
    suspect_events: int
    messages: int
    bytes: int
    first_detect: List[float]
    full_dissem: List[float]
    undetected: int
    buddy_violations: int
    max_suspect_transmissions: int
    suspect_bound: int
    digest: str = ""

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def summarize(log: SimEventLog, digest: bool = True, scan: Optional[BuddyScan] = None) -> RunSummary:
    with gc_paused():
        fp = count_false_positives(log)
        first, full, undetected = detection_samples(log)
        messages, size = message_load(log)
        if scan is None:
            scan = scan_buddy_and_budget(log)
    return RunSummary(log.meta.get("config", ""), dict(log.meta.get("plan", {})),
                      fp.fp, fp.fp_minus, fp.suspect_events, messages, size, first, full,
                      undetected, scan.violations, scan.max_suspect_transmissions, scan.bound,
                      log.digest() if digest else "")


def aggregate(runs: Iterable[RunSummary]) -> Dict[str, Any]:
    runs = list(runs)
    first = [x for r in runs for x in r.first_detect]
    full = [x for r in runs for x in r.full_dissem]
    lat = LatencyStats.from_samples(first, full, sum(r.undetected for r in runs))
    return {
        "runs": len(runs),
        "fp": sum(r.fp for r in runs),
        "fp_minus": sum(r.fp_minus for r in runs),
        "suspect_events": sum(r.suspect_events for r in runs),
        "messages": sum(r.messages for r in runs),
        "bytes": sum(r.bytes for r in runs),
        "first_median": lat.first_median, "first_p99": lat.first_p99, "first_p999": lat.first_p999,
        "full_median": lat.full_median, "full_p99": lat.full_p99, "full_p999": lat.full_p999,
        "undetected": lat.undetected,
    }


REPORT_COLUMNS = ["config", "runs", "fp", "fp_pct", "fp_minus", "fp_minus_pct",
                  "first_median", "first_median_pct", "full_median", "full_median_pct",
                  "first_p99", "first_p999", "full_p99", "full_p999",
                  "messages", "messages_pct", "bytes", "bytes_pct", "missing_baseline"]


def report(stats: Mapping[str, Mapping[str, Any]], baseline: str = "SWIM") -> List[Dict[str, Any]]:
    """Rows of absolute values plus percent-of-baseline columns.

    Without a baseline entry the percent columns are empty and every row is
    flagged with ``missing_baseline``.
    """
    base = stats.get(baseline)
    names = sorted(stats, key=lambda n: n != baseline)
    rows = []
    for name in names:
        s = stats[name]
        row: Dict[str, Any] = {"config": name, "runs": s.get("runs")}
        for col in ("fp", "fp_minus", "first_median", "full_median", "messages", "bytes"):
            row[col] = s.get(col)
            row[col + "_pct"] = pct_of_baseline(s.get(col), base.get(col)) if base else None
        for col in ("first_p99", "first_p999", "full_p99", "full_p999"):
            row[col] = s.get(col)
        row["missing_baseline"] = base is None
        rows.append(row)
    return rows


def format_table(rows: Sequence[Mapping[str, Any]], columns: Optional[Sequence[str]] = None) -> str:
    columns = list(columns or ["config", "fp", "fp_pct", "fp_minus", "fp_minus_pct",
                               "first_median", "full_median", "messages_pct", "bytes_pct"])

    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.2f}"
        return str(v)

    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def write_csv(path, rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fp:
        w = csv.DictWriter(fp, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in columns})


def write_summary(path, doc: Mapping[str, Any]) -> None:
    with open(path, "w") as fp:
        json.dump(doc, fp, indent=2, sort_keys=True)
        fp.write("\n")


__all__ = [
    "FalsePositiveStats", "LatencyStats", "BuddyScan", "RunSummary", "percentile",
    "pct_of_baseline", "count_false_positives", "detection_samples", "detection_latencies",
    "message_load", "scan_buddy_and_budget", "summarize", "aggregate", "report",
    "format_table", "write_csv", "write_summary", "REPORT_COLUMNS",
]
