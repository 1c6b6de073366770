"""Discrete-event kernel hosting many :class:`~lifeguard.core.Node` instances.

Virtual time is kept in integer microseconds. The event heap is ordered by
``(time, node index, insertion sequence)``, so simultaneous events resolve by
node and then by the order they were scheduled.

Three anomaly models are available. In all of them a blocked node's
arriving messages wait in an inbox that is drained, in arrival order, when
the window closes.

``io-block`` (default)
    The node's message I/O stops but its clock and its loops keep running.
    Every timer fires on time; whatever the node sends is held until the
    window closes and goes out just before the inbox is drained.

``stall``
    Sends block. A node's prober, gossiper and anti-entropy loop each stop
    at their first send inside the window; the send is held, and timers of
    that loop which come due while it is stuck run as soon as the window
    closes. The clock does not stop, so a probe round blocked past its
    deadline finds it expired. Timers outside the loops (suspicion
    deadlines, nacks) keep firing, with any sends they make held as well.

``suspend``
    The node stops completely. Timers and arrivals due inside the window
    are deferred and replayed in timestamp order at its end.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .. import codec
from ..config import Config
from ..core.node import TIMER_LOOPS, Node
from ..types import Channel, Send, SetTimer, State, StateChange
from .log import (
    ANOMALY_END, ANOMALY_START, DROP, RECV, SEND, STATE, STATE_NAMES, SimEventLog, gc_paused,
)

TIMER, DELIVER, A_START, A_END = 0, 1, 2, 3
ANOMALY_MODES = ("io-block", "stall", "suspend")

_ALIVE = State.ALIVE
_UNRELIABLE = Channel.UNRELIABLE


def derive_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{master}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def node_ids(n: int) -> List[str]:
    width = max(3, len(str(n - 1)))
    return [f"n{i:0{width}d}" for i in range(n)]


@dataclass(frozen=True)
class SimConfig:
    node_count: int = 128
    latency_ms: Tuple[float, float] = (0.5, 2.0)
    loss: float = 0.0
    seed: int = 0
    quiesce_ms: float = 15000.0
    anomaly_mode: str = "io-block"

    def __post_init__(self):
        lo, hi = self.latency_ms
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss probability must be within [0, 1]")
        if not 0 < lo <= hi:
            raise ValueError("latency bounds must satisfy 0 < low <= high")
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        if self.anomaly_mode not in ANOMALY_MODES:
            raise ValueError(f"anomaly_mode must be one of {ANOMALY_MODES}")


class Simulator:
    def __init__(self, sim: SimConfig, protocol: Config,
                 ids: Optional[Sequence[str]] = None, meta: Optional[dict] = None):
        self.sim = sim
        self.protocol = protocol
        self.ids: List[str] = list(ids) if ids is not None else node_ids(sim.node_count)
        self.index: Dict[str, int] = {m: i for i, m in enumerate(self.ids)}
        self.nodes: List[Node] = [
            Node(m, protocol, random.Random(derive_seed(sim.seed, m)), peers=self.ids)
            for m in self.ids
        ]
        self.net_rng = random.Random(derive_seed(sim.seed, "network"))
        self._lat_lo = max(1, round(sim.latency_ms[0] * 1000))
        self._lat_hi = max(self._lat_lo, round(sim.latency_ms[1] * 1000))
        self._lat_span = self._lat_hi - self._lat_lo + 1
        self.now = 0
        self._heap: List[tuple] = []
        self._seq = 0
        self._msg_id = 0
        n = len(self.ids)
        self.blocked = [False] * n
        self.held: List[List[Send]] = [[] for _ in range(n)]
        self.backlog: List[List[tuple]] = [[] for _ in range(n)]
        # stall mode: loops blocked in a send, and their timers that came due
        self.stuck: List[set] = [set() for _ in range(n)]
        self.parked: List[List[tuple]] = [[] for _ in range(n)]
        self.windows: Dict[str, List[List[int]]] = {}
        # (observer, member) pairs currently seen as anything but alive.
        self.unhealthy = 0
        self.log = SimEventLog({
            "nodes": self.ids,
            "config": protocol.name or "custom",
            "protocol": protocol.as_dict(),
            "seed": sim.seed,
            "latency_ms": list(sim.latency_ms),
            "loss": sim.loss,
            "quiesce_us": round(sim.quiesce_ms * 1000),
            "anomaly_mode": sim.anomaly_mode,
            "anomalies": {},
            **(meta or {}),
        })
        self._started = False
        self._anomalies_dirty = False

    # -- scheduling ------------------------------------------------------------

    def _push(self, t: int, idx: int, etype: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, idx, self._seq, etype, payload))

    def inject_anomaly(self, node: str, start_ms: float, end_ms: float) -> None:
        """Block ``node`` during ``[start_ms, end_ms)``; overlapping windows merge."""
        if not start_ms < end_ms:
            raise ValueError("anomaly start must precede its end")
        if node not in self.index:
            raise KeyError(node)
        if self._started and round(start_ms * 1000) < self.now:
            raise ValueError("anomaly window starts in the past")
        start, end = round(start_ms * 1000), round(end_ms * 1000)
        windows: List[List[int]] = []
        for s, e in sorted(self.windows.get(node, []) + [[start, end]]):
            if windows and s <= windows[-1][1]:
                windows[-1][1] = max(windows[-1][1], e)
            else:
                windows.append([s, e])
        self.windows[node] = windows
        self._anomalies_dirty = True
        if self._started:
            self._sync_anomaly_meta()

    def _sync_anomaly_meta(self) -> None:
        if self._anomalies_dirty:
            self._anomalies_dirty = False
            self.log.meta["anomalies"] = {k: [list(w) for w in v] for k, v in sorted(self.windows.items())}

    def _schedule_anomalies(self) -> None:
        for node, windows in sorted(self.windows.items()):
            idx = self.index[node]
            for s, e in windows:
                self._push(s, idx, A_START, None)
                self._push(e, idx, A_END, None)

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self._sync_anomaly_meta()
        self._schedule_anomalies()
        for idx, node in enumerate(self.nodes):
            self._process(idx, node.start(0.0), 0)

    # -- output handling ---------------------------------------------------------

    def _process(self, idx: int, outputs: List, t: int) -> None:
        for o in outputs:
            cls = type(o)
            if cls is Send:
                self._send(idx, o, t)
            elif cls is SetTimer:
                at = math.ceil(o.fire_at * 1000 - 1e-6)
                self._push(at if at > t else t, idx, TIMER, o.timer)
            elif cls is StateChange:
                self._state_change(idx, o, t)

    def _state_change(self, idx: int, change: StateChange, t: int) -> None:
        old, new = change.old, change.new
        was_bad = old is not None and old != _ALIVE
        is_bad = new != _ALIVE
        self.unhealthy += is_bad - was_bad
        self.log.records.append((STATE, t, self.ids[idx], change.member,
                                 None if old is None else STATE_NAMES[old],
                                 STATE_NAMES[new], change.incarnation))

    def _send(self, idx: int, send: Send, t: int) -> None:
        # The send is logged when the node emits it, so the record reflects the
        # node's view at that moment; a blocked node's message leaves later.
        env = send.envelope
        self._msg_id += 1
        mid = self._msg_id
        self.log.records.append((SEND, t, self.ids[idx], send.dest, mid, int(env.kind),
                                 int(send.channel), codec.encoded_size(env), env.updates, env.buddy))
        if self.blocked[idx] and self.sim.anomaly_mode != "suspend":
            self.held[idx].append((mid, send))
        else:
            self._transmit(idx, mid, send, t)

    def _transmit(self, idx: int, mid: int, send: Send, t: int) -> None:
        dst = self.index.get(send.dest)
        if dst is None:
            self.log.records.append((DROP, t, self.ids[idx], send.dest, mid, "unknown"))
            return
        rng = self.net_rng
        if send.channel == _UNRELIABLE and self.sim.loss > 0 and rng.random() < self.sim.loss:
            self.log.records.append((DROP, t, self.ids[idx], send.dest, mid, "loss"))
            return
        # uniform over the integer microseconds in [lo, hi]; cheaper than randint
        lat = self._lat_lo + int(rng.random() * self._lat_span)
        self._push(t + lat, dst, DELIVER, (mid, send.envelope, send.channel))

    def _deliver(self, idx: int, payload, t: int) -> None:
        mid, env, channel = payload
        self.log.records.append((RECV, t, self.ids[idx], mid))
        self._process(idx, self.nodes[idx].on_message(env, t / 1000.0, channel), t)

    # -- main loop ---------------------------------------------------------------

    def advance(self) -> Optional[tuple]:
        """Process the next event; returns ``(time_us, node, kind)`` or None when idle."""
        if not self._started:
            self.start()
        if not self._heap:
            return None
        t, idx, _, etype, payload = heapq.heappop(self._heap)
        self.now = t
        self._dispatch(t, idx, etype, payload)
        return (t, self.ids[idx], etype)

    def _dispatch(self, t: int, idx: int, etype: int, payload) -> None:
        if etype == TIMER:
            if not self.blocked[idx]:
                self._process(idx, self.nodes[idx].handle_timer(payload, t / 1000.0), t)
            elif self.sim.anomaly_mode == "stall":
                self._stalled_timer(idx, payload, t)
            elif self.sim.anomaly_mode == "suspend":
                self.backlog[idx].append((TIMER, payload))
            else:
                self._process(idx, self.nodes[idx].handle_timer(payload, t / 1000.0), t)
        elif etype == DELIVER:
            if self.blocked[idx]:
                self.backlog[idx].append((DELIVER, payload))
            else:
                self._deliver(idx, payload, t)
        elif etype == A_START:
            self.blocked[idx] = True
            self.log.records.append((ANOMALY_START, t, self.ids[idx]))
        else:
            self.blocked[idx] = False
            self.log.records.append((ANOMALY_END, t, self.ids[idx]))
            held, self.held[idx] = self.held[idx], []
            for mid, send in held:
                self._transmit(idx, mid, send, t)
            self.stuck[idx].clear()
            parked, self.parked[idx] = self.parked[idx], []
            for timer in parked:
                self._push(t, idx, TIMER, timer)
            backlog, self.backlog[idx] = self.backlog[idx], []
            now = t / 1000.0
            node = self.nodes[idx]
            for kind, payload in backlog:
                if kind == TIMER:
                    self._process(idx, node.handle_timer(payload, now), t)
                else:
                    self._deliver(idx, payload, t)

    def _stalled_timer(self, idx: int, timer: tuple, t: int) -> None:
        loop = TIMER_LOOPS.get(timer[0])
        stuck = self.stuck[idx]
        if loop in stuck:
            self.parked[idx].append(timer)
            return
        outputs = self.nodes[idx].handle_timer(timer, t / 1000.0)
        if loop is not None and any(type(o) is Send for o in outputs):
            stuck.add(loop)
        self._process(idx, outputs, t)

    def run(self, until_ms: float, stop_when_healthy_after_ms: Optional[float] = None) -> SimEventLog:
        """Run until virtual time ``until_ms`` (inclusive) or the heap empties.

        With ``stop_when_healthy_after_ms`` set, also stop at the first moment
        at or after that time when every node sees every member as alive.
        """
        if not self._started:
            self.start()
        until = round(until_ms * 1000)
        stop_after = None if stop_when_healthy_after_ms is None else round(stop_when_healthy_after_ms * 1000)
        heap = self._heap
        if stop_after is not None and self.now >= stop_after and self.unhealthy == 0:
            return self.log
        with gc_paused():
            self._loop(heap, until, stop_after)
        self.log.meta["end_us"] = self.now
        return self.log

    def _loop(self, heap, until: int, stop_after: Optional[int]) -> None:
        pop = heapq.heappop
        dispatch = self._dispatch
        while heap:
            if heap[0][0] > until:
                self.now = until
                break
            t, idx, _, etype, payload = pop(heap)
            self.now = t
            dispatch(t, idx, etype, payload)
            if stop_after is not None and t >= stop_after and self.unhealthy == 0:
                break

    # -- inspection --------------------------------------------------------------

    def views(self) -> Dict[str, Dict[str, State]]:
        return {m: n.members() for m, n in zip(self.ids, self.nodes)}

    def healthy(self) -> bool:
        return self.unhealthy == 0

    def in_flight(self) -> int:
        """Messages logged as sent but neither received nor dropped yet."""
        pending = sum(1 for e in self._heap if e[3] == DELIVER)
        pending += sum(len(h) for h in self.held)
        pending += sum(1 for b in self.backlog for kind, _ in b if kind == DELIVER)
        return pending


def simulate(protocol: Config, sim: SimConfig = SimConfig(),
             anomalies: Iterable[Tuple[str, float, float]] = (),
             until_ms: float = 60000.0) -> SimEventLog:
    """One-shot helper: build a simulator, inject anomalies, run."""
    s = Simulator(sim, protocol)
    for node, start, end in anomalies:
        s.inject_anomaly(node, start, end)
    return s.run(until_ms)
