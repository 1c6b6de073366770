"""Transmit-limited queue of membership updates awaiting piggybacking."""

from __future__ import annotations

from typing import Callable, Dict, List, Optional

from ..types import GossipUpdate

# Entries are plain lists so selection can sort them without a key function:
# [transmits, about, kind, incarnation, origin, limit, update]
_TX, _LIMIT, _UPDATE = 0, 5, 6


class GossipQueue:
    """Updates with per-update retransmission budgets.

    Enqueuing an update evicts queued updates about the same member that it
    supersedes; updates with equal precedence (suspicions about the same
    incarnation from different accusers) coexist.
    """

    def __init__(self):
        self._entries: Dict[GossipUpdate, list] = {}
        self._by_member: Dict[str, List[GossipUpdate]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __bool__(self) -> bool:
        return bool(self._entries)

    def __contains__(self, update: GossipUpdate) -> bool:
        return update in self._entries

    def remaining(self, update: GossipUpdate) -> int:
        entry = self._entries.get(update)
        return 0 if entry is None else entry[_LIMIT] - entry[_TX]

    def updates(self) -> List[GossipUpdate]:
        return list(self._entries)

    def enqueue(self, update: GossipUpdate, limit: int) -> None:
        about = update.about
        same = self._by_member.get(about)
        if same is None:
            same = self._by_member[about] = []
        else:
            key = (update.incarnation, update.kind)
            for u in [u for u in same if (u.incarnation, u.kind) < key]:
                del self._entries[u]
                same.remove(u)
        if update not in self._entries:
            same.append(update)
        self._entries[update] = [0, about, update.kind, update.incarnation, update.origin, limit, update]

    def _drop(self, update: GossipUpdate) -> None:
        del self._entries[update]
        same = self._by_member[update.about]
        same.remove(update)
        if not same:
            del self._by_member[update.about]

    def select(self, byte_budget: int, size_of: Callable[[GossipUpdate], int],
               skip: Optional[GossipUpdate] = None) -> List[GossipUpdate]:
        """Take updates, least-transmitted first, while they fit the budget.

        Each taken update spends one transmission; exhausted ones are dropped.
        Ties are broken by member id then the remaining update fields.
        """
        if not self._entries:
            return []
        chosen: List[GossipUpdate] = []
        for entry in sorted(self._entries.values()):
            u = entry[_UPDATE]
            if u == skip:
                continue
            size = size_of(u)
            if size > byte_budget:
                continue
            byte_budget -= size
            chosen.append(u)
            entry[_TX] += 1
            if entry[_TX] >= entry[_LIMIT]:
                self._drop(u)
        return chosen
