"""Simulation event log.

Records are tuples whose first element names the record type; timestamps
are integer microseconds of virtual time. Field order is fixed:

    ("send", t, src, dst, msg_id, kind, channel, size, updates, buddy)
    ("recv", t, node, msg_id)
    ("drop", t, src, dst, msg_id, reason)
    ("state", t, node, member, old, new, incarnation)
    ("anomaly_start", t, node)
    ("anomaly_end", t, node)

``updates`` is the piggyback, each entry ``[state, member, incarnation,
origin]`` with state 0/1/2 for alive/suspect/dead; ``buddy`` is true when the
first entry was forced in by the buddy rule rather than drawn from the gossip
queue. ``old`` is null for a member learned for the first time.

The serialized form is newline-delimited JSON: one header object carrying
``meta`` followed by one JSON array per record.
"""

from __future__ import annotations

import gc
import hashlib
import io
import json
from contextlib import contextmanager
from typing import IO, Any, Dict, Iterable, Iterator, List, Optional

from ..types import GossipUpdate, State


@contextmanager
def gc_paused():
    """Suspend cyclic garbage collection for the duration of the block.

    Logs run to millions of acyclic tuples; collection passes over them cost
    more than the simulation or the scans that build and read them.
    """
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()

SEND, RECV, DROP, STATE = "send", "recv", "drop", "state"
ANOMALY_START, ANOMALY_END = "anomaly_start", "anomaly_end"

STATE_NAMES = ("alive", "suspect", "dead")


class SimEventLog:
    def __init__(self, meta: Optional[Dict[str, Any]] = None):
        self.meta: Dict[str, Any] = dict(meta or {})
        self.records: List[tuple] = []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[tuple]:
        return iter(self.records)

    def of_type(self, *kinds: str) -> Iterator[tuple]:
        return (r for r in self.records if r[0] in kinds)

    # -- convenience views over meta -----------------------------------------

    @property
    def nodes(self) -> List[str]:
        return list(self.meta.get("nodes", []))

    @property
    def anomaly_windows(self) -> Dict[str, List[List[int]]]:
        return {k: [list(w) for w in v] for k, v in self.meta.get("anomalies", {}).items()}

    @property
    def anomalous(self) -> set:
        return set(self.meta.get("anomalies", {}))

    @property
    def quiesce_us(self) -> int:
        return int(self.meta.get("quiesce_us", 0))

    # -- serialization -------------------------------------------------------

    def iter_lines(self) -> Iterator[str]:
        yield json.dumps({"meta": self.meta}, sort_keys=True, separators=(",", ":"))
        dumps = json.JSONEncoder(separators=(",", ":")).encode
        for r in self.records:
            yield dumps(r)

    def write(self, fp: IO[str]) -> None:
        for line in self.iter_lines():
            fp.write(line)
            fp.write("\n")

    def to_ndjson(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.iter_lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    @classmethod
    def read(cls, lines: Iterable[str]) -> "SimEventLog":
        it = iter(lines)
        log = cls()
        first = next(it, None)
        if first is None:
            return log
        head = json.loads(first)
        if not isinstance(head, dict) or "meta" not in head:
            raise ValueError("log does not start with a meta header")
        log.meta = head["meta"]
        for line in it:
            if line.strip():
                log.records.append(_retuple(json.loads(line)))
        return log

    @classmethod
    def from_ndjson(cls, text: str) -> "SimEventLog":
        return cls.read(text.splitlines())


def _retuple(rec: list) -> tuple:
    if rec[0] == SEND:
        rec[8] = tuple(GossipUpdate(State(k), a, i, o) for k, a, i, o in rec[8])
    return tuple(rec)
