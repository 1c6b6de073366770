"""Domain types shared by the protocol core, the codec and the simulator.

Member identifiers are plain strings (``"host:port"`` for real agents,
``"n007"`` style names in simulation); string ordering gives the total order
used for deterministic tie-breaking.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

MemberId = str


class State(enum.IntEnum):
    # Numeric order is the precedence rank at equal incarnation.
    ALIVE = 0
    SUSPECT = 1
    DEAD = 2


class MsgKind(enum.IntEnum):
    PING = 1
    PING_REQ = 2
    ACK = 3
    NACK = 4
    GOSSIP = 5
    PUSH_PULL = 6


class Channel(enum.IntEnum):
    UNRELIABLE = 0
    RELIABLE = 1


# Envelope flag bits.
FLAG_NACK_WANTED = 0x01
FLAG_REPLY = 0x02


class GossipUpdate(NamedTuple):
    # A NamedTuple rather than a dataclass: updates are hashed and compared on
    # every piggyback selection, and tuple hashing is done in C.
    kind: State
    about: MemberId
    incarnation: int
    origin: MemberId

    @property
    def key(self) -> Tuple[int, int]:
        return (self.incarnation, self.kind)


@dataclass(slots=True)
class Envelope:
    kind: MsgKind
    seq: int
    sender: MemberId
    target: Optional[MemberId] = None
    updates: Tuple[GossipUpdate, ...] = ()
    flags: int = 0
    # Set by the sender when the first update was forced in by the buddy rule.
    # Local bookkeeping only; never encoded.
    buddy: bool = field(default=False, compare=False)


@dataclass(slots=True)
class MemberRecord:
    id: MemberId
    state: State
    incarnation: int
    changed_at: float = 0.0

    @property
    def key(self) -> Tuple[int, int]:
        return (self.incarnation, self.state)


# -- protocol outputs --------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Send:
    dest: MemberId
    envelope: Envelope
    channel: Channel = Channel.UNRELIABLE


@dataclass(frozen=True, slots=True)
class SetTimer:
    fire_at: float
    timer: tuple


@dataclass(frozen=True, slots=True)
class StateChange:
    member: MemberId
    old: Optional[State]
    new: State
    incarnation: int
