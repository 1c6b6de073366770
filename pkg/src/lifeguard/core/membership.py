"""Member records, update precedence and round-robin probe order."""

from __future__ import annotations

import random
from typing import Dict, List, Optional

from ..types import GossipUpdate, MemberId, MemberRecord, State


def overrides(update: GossipUpdate, record: Optional[MemberRecord]) -> bool:
    """True if ``update`` should replace ``record``.

    Updates are ordered by (incarnation, state) with alive < suspect < dead,
    so alive needs a strictly higher incarnation to win, suspect beats alive
    at equal incarnation and dead beats both. Any record beats nothing.
    """
    if record is None:
        return True
    return (update.incarnation, update.kind) > (record.incarnation, record.state)


class MembershipTable:
    """Records for every known member plus the probe order over live peers.

    ``order`` holds each non-dead member other than ourselves exactly once.
    The cursor walks it round-robin; a completed traversal reshuffles it.
    """

    def __init__(self, me: MemberId, rng: random.Random):
        self.me = me
        self.rng = rng
        self.records: Dict[MemberId, MemberRecord] = {}
        self.order: List[MemberId] = []
        self.cursor = 0
        self.live = 0

    def __contains__(self, member: MemberId) -> bool:
        return member in self.records

    def __len__(self) -> int:
        return len(self.records)

    def get(self, member: MemberId) -> Optional[MemberRecord]:
        return self.records.get(member)

    def state_of(self, member: MemberId) -> Optional[State]:
        rec = self.records.get(member)
        return None if rec is None else rec.state

    def put(self, member: MemberId, state: State, incarnation: int, now: float) -> Optional[State]:
        """Set a record, keeping probe order and live count in step.

        Returns the previous state (None if the member was unknown).
        """
        rec = self.records.get(member)
        old = None if rec is None else rec.state
        if rec is None:
            rec = self.records[member] = MemberRecord(member, state, incarnation, now)
        else:
            rec.state = state
            rec.incarnation = incarnation
            rec.changed_at = now
        was_live = old is not None and old != State.DEAD
        is_live = state != State.DEAD
        if is_live and not was_live:
            self.live += 1
            if member != self.me:
                self._insert(member)
        elif was_live and not is_live:
            self.live -= 1
            if member != self.me:
                self._remove(member)
        return old

    def forget(self, member: MemberId) -> None:
        rec = self.records.pop(member, None)
        if rec is not None and rec.state != State.DEAD:
            self.live -= 1
            if member != self.me:
                self._remove(member)

    def _insert(self, member: MemberId) -> None:
        idx = self.rng.randint(0, len(self.order))
        self.order.insert(idx, member)
        if idx < self.cursor:
            self.cursor += 1

    def _remove(self, member: MemberId) -> None:
        idx = self.order.index(member)
        del self.order[idx]
        if idx < self.cursor:
            self.cursor -= 1

    def next_probe_target(self) -> Optional[MemberId]:
        if not self.order:
            return None
        if self.cursor >= len(self.order):
            self.rng.shuffle(self.order)
            self.cursor = 0
        target = self.order[self.cursor]
        self.cursor += 1
        return target

    def random_peers(self, k: int, exclude: Optional[MemberId] = None,
                     alive_only: bool = False) -> List[MemberId]:
        if alive_only or exclude is not None:
            records = self.records
            pool = [m for m in self.order
                    if m != exclude and (not alive_only or records[m].state == State.ALIVE)]
        else:
            pool = self.order
        if k >= len(pool):
            return list(pool)
        return self.rng.sample(pool, k)

    def snapshot(self) -> List[MemberRecord]:
        return [self.records[m] for m in sorted(self.records)]
