"""The SWIM + Lifeguard membership state machine.

A :class:`Node` owns one member's view of the group. It never reads a clock
or an ambient random source: every entry point takes ``now`` (milliseconds,
any monotonic origin) and returns a list of outputs for the host to carry
out. ``Send`` goes to the network, ``SetTimer`` must be fed back through
:meth:`Node.handle_timer` at ``fire_at``, ``StateChange`` is informational.
Timers are never cancelled; stale ones are recognised and ignored.
"""

from __future__ import annotations

import math
import random
from typing import Dict, Iterable, List, Optional, Set

from .. import codec
from ..config import Config
from ..types import (
    FLAG_NACK_WANTED, FLAG_REPLY, Channel, Envelope, GossipUpdate, MemberId,
    MsgKind, Send, SetTimer, State, StateChange,
)
from .gossip import GossipQueue
from .membership import MembershipTable
from .timeouts import LocalHealth, gossip_budget, suspicion_bounds, suspicion_timeout

ALIVE, SUSPECT, DEAD = State.ALIVE, State.SUSPECT, State.DEAD
PING, PING_REQ, ACK, NACK, GOSSIP, PUSH_PULL = (
    MsgKind.PING, MsgKind.PING_REQ, MsgKind.ACK, MsgKind.NACK, MsgKind.GOSSIP, MsgKind.PUSH_PULL)
RELIABLE = Channel.RELIABLE
UNRELIABLE = Channel.UNRELIABLE

_update_size = codec.update_size

# Timers that belong to one sequential loop of an agent (the prober, the
# gossiper, the anti-entropy syncer). A host that can block a send may use
# this to stall the rest of that loop until the send completes. Suspicion
# and nack timers run on their own.
TIMER_LOOPS = {"period": "probe", "probe_timeout": "probe", "period_end": "probe",
               "gossip": "gossip", "push_pull": "push_pull"}


class Suspicion:
    """Open suspicion about one member at one incarnation.

    ``origin`` is the accuser whose report raised it here; ``accusers`` are
    the independent accusers heard from since, excluding ``origin`` and
    ourselves, so ``len(accusers)`` is the confirmation count.
    """

    __slots__ = ("suspect", "incarnation", "origin", "accusers", "start",
                 "min", "max", "deadline", "gossiped", "self_gossiped", "token")

    def __init__(self, suspect, incarnation, origin, start, lo, hi, token):
        self.suspect = suspect
        self.incarnation = incarnation
        self.origin = origin
        self.accusers: Set[MemberId] = set()
        self.start = start
        self.min = lo
        self.max = hi
        self.deadline = start + hi
        self.gossiped = 1
        self.self_gossiped = False
        self.token = token

    @property
    def confirmations(self) -> int:
        return len(self.accusers)


class ProbeRound:
    __slots__ = ("seq", "target", "started", "acked", "indirect", "expected", "responders")

    def __init__(self, seq, target, started):
        self.seq = seq
        self.target = target
        self.started = started
        self.acked = False
        self.indirect = False
        self.expected = 0
        self.responders: Set[MemberId] = set()


class Relay:
    __slots__ = ("requester", "seq", "created", "nacked")

    def __init__(self, requester, seq, created):
        self.requester = requester
        self.seq = seq
        self.created = created
        self.nacked = False


class Node:
    def __init__(self, me: MemberId, config: Config, rng: random.Random,
                 peers: Iterable[MemberId] = (), now: float = 0.0):
        self.me = me
        self.config = config
        self.rng = rng
        self.table = MembershipTable(me, rng)
        self.incarnation = 0
        self.table.put(me, ALIVE, 0, now)
        for p in peers:
            if p != me and p not in self.table:
                self.table.put(p, ALIVE, 0, now)
        self.health = LocalHealth(config.lhm_max, enabled=config.lha_probe)
        self.queue = GossipQueue()
        self.suspicions: Dict[MemberId, Suspicion] = {}
        self.refutations = 0
        self._seq = 0
        self._token = 0
        self._round: Optional[ProbeRound] = None
        self._relays: Dict[int, Relay] = {}
        self._gossip_armed = False
        self._gossip_phase = now
        self._budget_for = -1
        self._budget = 1

    # -- accessors -----------------------------------------------------------

    @property
    def lhm(self) -> int:
        return self.health.value

    def probe_interval(self) -> float:
        return self.health.scale(self.config.base_probe_interval)

    def probe_timeout(self) -> float:
        return self.health.scale(self.config.base_probe_timeout)

    def state_of(self, member: MemberId) -> Optional[State]:
        return self.table.state_of(member)

    def members(self) -> Dict[MemberId, State]:
        return {m: r.state for m, r in self.table.records.items()}

    def _next_seq(self) -> int:
        self._seq = (self._seq + 1) & 0xFFFFFFFF
        return self._seq

    # -- lifecycle -----------------------------------------------------------

    def start(self, now: float) -> List:
        """Arm the periodic timers with seeded random phase offsets."""
        cfg = self.config
        self._gossip_phase = now + self.rng.uniform(0, cfg.gossip_interval)
        out: List = [
            SetTimer(now + self.rng.uniform(0, cfg.base_probe_interval), ("period",)),
            SetTimer(now + self.rng.uniform(0, cfg.push_pull_interval), ("push_pull",)),
        ]
        if self.queue:
            self._arm_gossip(now, out)
        return out

    def join(self, seeds: Iterable[MemberId], now: float) -> List:
        out: List = []
        for seed in seeds:
            if seed != self.me:
                out += self.anti_entropy_sync(seed, now)
        return out

    def handle_timer(self, timer: tuple, now: float) -> List:
        kind = timer[0]
        if kind == "period":
            return self.begin_protocol_period(now)
        if kind == "probe_timeout":
            return self.on_probe_timeout(None, now, seq=timer[1])
        if kind == "period_end":
            out = self.on_period_end(None, now, seq=timer[1])
            out += self.begin_protocol_period(now)
            return out
        if kind == "suspicion":
            return self._on_suspicion_timer(timer[1], timer[2], now)
        if kind == "gossip":
            return self.gossip_tick(now)
        if kind == "nack":
            return self._on_nack_timer(timer[1], now)
        if kind == "push_pull":
            return self._on_push_pull_timer(now)
        raise ValueError(f"unknown timer {timer!r}")

    # -- failure detector ----------------------------------------------------

    def begin_protocol_period(self, now: float) -> List:
        out: List = []
        interval = self.probe_interval()
        self._expire_relays(now)
        target = self.table.next_probe_target()
        if target is None:
            out.append(SetTimer(now + interval, ("period",)))
            return out
        seq = self._next_seq()
        self._round = ProbeRound(seq, target, now)
        out.append(Send(target, self._envelope(PING, seq, target)))
        out.append(SetTimer(now + self.probe_timeout(), ("probe_timeout", seq)))
        out.append(SetTimer(now + interval, ("period_end", seq)))
        return out

    def on_probe_timeout(self, target: Optional[MemberId], now: float,
                         seq: Optional[int] = None) -> List:
        out: List = []
        r = self._round
        if r is None or r.acked or (seq is not None and r.seq != seq) \
                or (target is not None and r.target != target):
            return out
        if self.table.state_of(r.target) in (None, DEAD):
            return out
        helpers = self.table.random_peers(self.config.indirect_fanout, exclude=r.target,
                                          alive_only=True)
        flags = FLAG_NACK_WANTED if self.config.lha_probe else 0
        for h in helpers:
            out.append(Send(h, self._envelope(PING_REQ, r.seq, h, target=r.target, flags=flags)))
        r.indirect = True
        r.expected = len(helpers)
        out.append(Send(r.target, self._envelope(PING, r.seq, r.target), RELIABLE))
        return out

    def on_period_end(self, target: Optional[MemberId], now: float,
                      seq: Optional[int] = None) -> List:
        out: List = []
        r = self._round
        if r is None or (seq is not None and r.seq != seq) \
                or (target is not None and r.target != target):
            return out
        self._round = None
        if r.acked:
            self.health.apply(-1)
            return out
        rec = self.table.get(r.target)
        if rec is None or rec.state == DEAD:
            return out
        delta = 1
        if r.indirect and self.config.lha_probe and len(r.responders) < r.expected:
            delta += 1
        self.health.apply(delta)
        self._suspect_from_probe(rec, now, out)
        return out

    def _suspect_from_probe(self, rec, now: float, out: List) -> None:
        if rec.state == ALIVE:
            self._accept(GossipUpdate(SUSPECT, rec.id, rec.incarnation, self.me), now, out)
            return
        s = self.suspicions.get(rec.id)
        if s is None or not self.config.lha_suspicion:
            return
        # Our own failed probe of an already-suspected member is an independent
        # suspicion for everyone else; it does not count toward our own total.
        if s.origin != self.me and not s.self_gossiped and s.gossiped <= self.config.suspicion_k:
            s.self_gossiped = True
            s.gossiped += 1
            self._enqueue(GossipUpdate(SUSPECT, rec.id, rec.incarnation, self.me), now, out)

    # -- messages ------------------------------------------------------------

    def handle_message(self, env: Envelope, now: float,
                       channel: Channel = UNRELIABLE) -> List:
        return self.on_message(env, now, channel)

    def on_message(self, env: Envelope, now: float, channel: Channel = UNRELIABLE) -> List:
        out: List = []
        if env.sender == self.me:
            return out
        if env.updates:
            records = self.table.records
            suspicions = self.suspicions
            me = self.me
            for u in env.updates:
                # Inline rejection of news we already hold; most piggybacked
                # updates are repeats once gossip is under way.
                about = u.about
                if about != me:
                    rec = records.get(about)
                    if rec is not None:
                        ui, ri = u.incarnation, rec.incarnation
                        if ui < ri:
                            continue
                        if ui == ri:
                            uk, rk = u.kind, rec.state
                            if uk < rk:
                                continue
                            if uk == rk:
                                if uk != SUSPECT:
                                    continue
                                s = suspicions.get(about)
                                if s is None or u.origin == s.origin or u.origin in s.accusers:
                                    continue
                self.apply_update(u, now, out)
        kind = env.kind
        if kind == PING:
            out.append(Send(env.sender, self._envelope(ACK, env.seq, env.sender), channel))
        elif kind == ACK:
            r = self._round
            if r is not None and r.seq == env.seq:
                r.acked = True
                if env.sender != r.target:
                    r.responders.add(env.sender)
            else:
                relay = self._relays.pop(env.seq, None)
                if relay is not None:
                    out.append(Send(relay.requester,
                                    self._envelope(ACK, relay.seq, relay.requester)))
        elif kind == PING_REQ:
            self._relay_probe(env, now, out)
        elif kind == NACK:
            r = self._round
            if r is not None and r.seq == env.seq:
                r.responders.add(env.sender)
        elif kind == PUSH_PULL:
            if not env.flags & FLAG_REPLY:
                out.append(Send(env.sender, self._snapshot_envelope(FLAG_REPLY), RELIABLE))
        return out

    def _relay_probe(self, env: Envelope, now: float, out: List) -> None:
        target = env.target
        if target is None:
            return
        if target == self.me:
            out.append(Send(env.sender, self._envelope(ACK, env.seq, env.sender)))
            return
        seq = self._next_seq()
        self._relays[seq] = Relay(env.sender, env.seq, now)
        out.append(Send(target, self._envelope(PING, seq, target)))
        if env.flags & FLAG_NACK_WANTED:
            out.append(SetTimer(now + self.config.nack_fraction * self.probe_timeout(),
                                ("nack", seq)))

    def _on_nack_timer(self, seq: int, now: float) -> List:
        relay = self._relays.get(seq)
        if relay is None or relay.nacked:
            return []
        relay.nacked = True
        return [Send(relay.requester, Envelope(NACK, relay.seq, self.me))]

    def _expire_relays(self, now: float) -> None:
        if not self._relays:
            return
        horizon = now - self.config.base_probe_interval * (self.config.lhm_max + 1)
        stale = [s for s, r in self._relays.items() if r.created < horizon]
        for s in stale:
            del self._relays[s]

    # -- updates and suspicion -----------------------------------------------

    def apply_update(self, update: GossipUpdate, now: float,
                     out: Optional[List] = None) -> Optional[StateChange]:
        if out is None:
            out = []
        if update.about == self.me:
            self._apply_about_self(update, now, out)
            return None
        rec = self.table.records.get(update.about)
        if rec is None or (update.incarnation, update.kind) > (rec.incarnation, rec.state):
            return self._accept(update, now, out)
        if update.kind == SUSPECT and rec.state == SUSPECT and update.incarnation == rec.incarnation:
            s = self.suspicions.get(update.about)
            # repeats of accusations already counted are by far the common case
            if s is not None and (update.origin == s.origin or update.origin in s.accusers):
                return None
            self.register_independent_suspicion(update.about, update.origin, now, out)
        return None

    def _apply_about_self(self, update: GossipUpdate, now: float, out: List) -> None:
        if update.kind == ALIVE or update.incarnation < self.incarnation:
            return
        self.incarnation = update.incarnation + 1
        self.table.put(self.me, ALIVE, self.incarnation, now)
        self.refutations += 1
        self.health.apply(1)
        self._enqueue(GossipUpdate(ALIVE, self.me, self.incarnation, self.me), now, out)

    def _accept(self, update: GossipUpdate, now: float, out: List) -> Optional[StateChange]:
        member = update.about
        prev = self.table.records.get(member)
        prev_inc = None if prev is None else prev.incarnation
        old = self.table.put(member, update.kind, update.incarnation, now)
        self.suspicions.pop(member, None)
        if update.kind == SUSPECT:
            self._start_suspicion(member, update.incarnation, update.origin, now, out)
        self._enqueue(update, now, out)
        if old == update.kind and prev_inc == update.incarnation:
            return None
        change = StateChange(member, old, update.kind, update.incarnation)
        out.append(change)
        return change

    def _start_suspicion(self, member, incarnation, origin, now, out) -> Suspicion:
        cfg = self.config
        beta = cfg.beta if cfg.lha_suspicion else 1.0
        lo, hi = suspicion_bounds(self.table.live, cfg.alpha, beta, cfg.base_probe_interval)
        self._token += 1
        s = Suspicion(member, incarnation, origin, now, lo, hi, self._token)
        self.suspicions[member] = s
        out.append(SetTimer(s.deadline, ("suspicion", member, s.token)))
        return s

    def register_independent_suspicion(self, suspect: MemberId, origin: MemberId,
                                       now: float, out: Optional[List] = None) -> List:
        if out is None:
            out = []
        s = self.suspicions.get(suspect)
        if s is None or not self.config.lha_suspicion:
            return out
        if origin == self.me or origin == s.origin or origin in s.accusers:
            return out
        s.accusers.add(origin)
        k = self.config.suspicion_k
        c = len(s.accusers)
        deadline = s.start + suspicion_timeout(s.min, s.max, k, c)
        if deadline < s.deadline:
            s.deadline = deadline
            if deadline <= now:
                self.confirm_failure(suspect, now, out)
                return out
            out.append(SetTimer(deadline, ("suspicion", suspect, s.token)))
        if c <= k and s.gossiped <= k:
            s.gossiped += 1
            self._enqueue(GossipUpdate(SUSPECT, suspect, s.incarnation, origin), now, out)
        return out

    def _on_suspicion_timer(self, member: MemberId, token: int, now: float) -> List:
        s = self.suspicions.get(member)
        if s is None or s.token != token or now + 1e-6 < s.deadline:
            return []
        return self.confirm_failure(member, now)

    def confirm_failure(self, member: MemberId, now: float, out: Optional[List] = None) -> List:
        if out is None:
            out = []
        rec = self.table.get(member)
        if rec is None or rec.state == DEAD or member == self.me:
            return out
        self.suspicions.pop(member, None)
        old = self.table.put(member, DEAD, rec.incarnation, now)
        self._enqueue(GossipUpdate(DEAD, member, rec.incarnation, self.me), now, out)
        out.append(StateChange(member, old, DEAD, rec.incarnation))
        return out

    # -- dissemination -------------------------------------------------------

    def _enqueue(self, update: GossipUpdate, now: float, out: List) -> None:
        live = self.table.live
        if live != self._budget_for:
            self._budget_for = live
            self._budget = gossip_budget(live, self.config.retransmit_mult)
        self.queue.enqueue(update, self._budget)
        if not self._gossip_armed:
            self._arm_gossip(now, out)

    def _arm_gossip(self, now: float, out: List) -> None:
        interval = self.config.gossip_interval
        ticks = math.floor((now - self._gossip_phase) / interval) + 1
        self._gossip_armed = True
        out.append(SetTimer(self._gossip_phase + ticks * interval, ("gossip",)))

    def select_piggyback(self, kind: MsgKind, dest: MemberId, byte_budget: int) -> List[GossipUpdate]:
        """Updates to attach to a message of ``kind`` bound for ``dest``.

        With the buddy rule on, a ping to a member we suspect always leads
        with that suspicion, free of charge against its budget.
        """
        return self._piggyback(kind, dest, byte_budget)[0]

    def _piggyback(self, kind, dest, byte_budget):
        forced = None
        if kind == PING and self.config.buddy:
            rec = self.table.records.get(dest)
            if rec is not None and rec.state == SUSPECT:
                s = self.suspicions.get(dest)
                forced = GossipUpdate(SUSPECT, dest, rec.incarnation,
                                      s.origin if s is not None else self.me)
                byte_budget -= _update_size(forced)
        if not self.queue:
            return ([forced] if forced is not None else []), forced is not None
        chosen = self.queue.select(byte_budget, _update_size, skip=forced)
        if forced is not None:
            chosen.insert(0, forced)
        return chosen, forced is not None

    def _envelope(self, kind: MsgKind, seq: int, dest: MemberId,
                  target: Optional[MemberId] = None, flags: int = 0) -> Envelope:
        budget = self.config.max_datagram - codec.header_size(self.me, target)
        updates, buddy = self._piggyback(kind, dest, budget)
        return Envelope(kind, seq, self.me, target, tuple(updates), flags, buddy)

    def gossip_tick(self, now: float) -> List:
        out: List = []
        self._gossip_armed = False
        if not self.queue:
            return out
        for peer in self.table.random_peers(self.config.gossip_fanout):
            env = self._envelope(GOSSIP, 0, peer)
            if not env.updates:
                break
            out.append(Send(peer, env))
        if self.queue:
            self._arm_gossip(now, out)
        return out

    # -- anti-entropy --------------------------------------------------------

    def snapshot(self) -> List[GossipUpdate]:
        updates = []
        for rec in self.table.snapshot():
            origin = self.me
            if rec.state == SUSPECT:
                s = self.suspicions.get(rec.id)
                if s is not None:
                    origin = s.origin
            updates.append(GossipUpdate(rec.state, rec.id, rec.incarnation, origin))
        return updates

    def _snapshot_envelope(self, flags: int = 0) -> Envelope:
        return Envelope(PUSH_PULL, self._next_seq(), self.me, None, tuple(self.snapshot()), flags)

    def anti_entropy_sync(self, peer: MemberId, now: float) -> List:
        return [Send(peer, self._snapshot_envelope(), RELIABLE)]

    def _on_push_pull_timer(self, now: float) -> List:
        self.expire_dead(now)
        out: List = []
        peers = self.table.random_peers(1)
        if peers:
            out += self.anti_entropy_sync(peers[0], now)
        out.append(SetTimer(now + self.config.push_pull_interval, ("push_pull",)))
        return out

    def expire_dead(self, now: float) -> None:
        retention = self.config.dead_retention
        expired = [m for m, r in self.table.records.items()
                   if r.state == DEAD and now - r.changed_at >= retention]
        for m in expired:
            self.table.forget(m)

    def next_probe_target(self) -> Optional[MemberId]:
        return self.table.next_probe_target()
