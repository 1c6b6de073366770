"""Binary wire format for protocol envelopes.

Layout (all integers little-endian)::

    u8   version            currently 1
    u8   kind               MsgKind
    u8   flags              FLAG_* bits; 0x80 marks a target field
    u32  sequence number
    str  sender
    str  target             only when flags & 0x80
    u16  update count
    update * count:
        u8   state          State (0 alive, 1 suspect, 2 dead)
        u32  incarnation
        str  about
        str  origin

``str`` is a u8 byte length followed by that many UTF-8 bytes. A compound
message (a probe message with piggybacked updates) is one datagram and one
envelope. Push-pull snapshots use the same layout with one update per member
record and travel on the reliable channel, so they are exempt from the
datagram limit.
"""

from __future__ import annotations

import struct
from functools import lru_cache
from typing import Iterable, Optional

from .types import Envelope, GossipUpdate, MsgKind, State

VERSION = 1
MAX_DATAGRAM = 1400
_HAS_TARGET = 0x80

_HEAD = struct.Struct("<BBBI")
_U16 = struct.Struct("<H")
_UPDATE_HEAD = struct.Struct("<BI")

HEADER_FIXED = _HEAD.size + _U16.size  # 9 bytes before strings
UPDATE_FIXED = _UPDATE_HEAD.size       # 5 bytes before strings


class CodecError(ValueError):
    pass


class MessageTooLarge(CodecError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"encoded envelope is {size} bytes, limit {limit}")
        self.size = size
        self.limit = limit


@lru_cache(maxsize=65536)
def _str_bytes(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 255:
        raise CodecError(f"identifier longer than 255 bytes: {s[:32]!r}...")
    return b


@lru_cache(maxsize=65536)
def str_size(s: str) -> int:
    return 1 + len(_str_bytes(s))


def header_size(sender: str, target: Optional[str] = None) -> int:
    size = HEADER_FIXED + str_size(sender)
    if target is not None:
        size += str_size(target)
    return size


@lru_cache(maxsize=1 << 18)
def update_size(update: GossipUpdate) -> int:
    return UPDATE_FIXED + str_size(update.about) + str_size(update.origin)


def encoded_size(env: Envelope) -> int:
    """Length of ``encode(env)`` without building the bytes."""
    size = header_size(env.sender, env.target)
    if env.updates:
        size += sum(map(update_size, env.updates))
    return size


def _put_str(buf: bytearray, s: str) -> None:
    b = _str_bytes(s)
    buf.append(len(b))
    buf += b


def encode(env: Envelope, limit: Optional[int] = None) -> bytes:
    """Serialize ``env``. Raises MessageTooLarge if ``limit`` is exceeded."""
    if env.flags & _HAS_TARGET:
        raise CodecError("flag bit 0x80 is reserved")
    if len(env.updates) > 0xFFFF:
        raise CodecError("too many updates for one envelope")
    flags = env.flags | (_HAS_TARGET if env.target is not None else 0)
    buf = bytearray(_HEAD.pack(VERSION, int(env.kind), flags, env.seq))
    _put_str(buf, env.sender)
    if env.target is not None:
        _put_str(buf, env.target)
    buf += _U16.pack(len(env.updates))
    for u in env.updates:
        buf += _UPDATE_HEAD.pack(int(u.kind), u.incarnation)
        _put_str(buf, u.about)
        _put_str(buf, u.origin)
    if limit is not None and len(buf) > limit:
        raise MessageTooLarge(len(buf), limit)
    return bytes(buf)


def decode(data: bytes) -> Envelope:
    try:
        return _decode(memoryview(data))
    except (struct.error, IndexError, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CodecError):
            raise
        raise CodecError(f"malformed envelope: {exc}") from exc


def _decode(view: memoryview) -> Envelope:
    version, kind, flags, seq = _HEAD.unpack_from(view, 0)
    if version != VERSION:
        raise CodecError(f"unsupported version {version}")
    kind = MsgKind(kind)
    pos = _HEAD.size
    sender, pos = _get_str(view, pos)
    target = None
    if flags & _HAS_TARGET:
        target, pos = _get_str(view, pos)
    (count,) = _U16.unpack_from(view, pos)
    pos += _U16.size
    updates = []
    for _ in range(count):
        state, inc = _UPDATE_HEAD.unpack_from(view, pos)
        pos += _UPDATE_HEAD.size
        about, pos = _get_str(view, pos)
        origin, pos = _get_str(view, pos)
        updates.append(GossipUpdate(State(state), about, inc, origin))
    if pos != len(view):
        raise CodecError(f"{len(view) - pos} trailing bytes")
    return Envelope(kind, seq, sender, target, tuple(updates), flags & ~_HAS_TARGET)


def _get_str(view: memoryview, pos: int):
    n = view[pos]
    end = pos + 1 + n
    if end > len(view):
        raise CodecError("string runs past end of message")
    return bytes(view[pos + 1:end]).decode("utf-8"), end


def max_updates_fitting(kind: MsgKind, byte_budget: int, id_length: int = 4) -> int:
    """Largest u with header + u * update_size <= byte_budget, for ids of
    ``id_length`` bytes. A PingReq header carries the target id as well."""
    ident = "x" * id_length
    header = header_size(ident, ident if kind == MsgKind.PING_REQ else None)
    per_update = UPDATE_FIXED + 2 * (1 + id_length)
    if byte_budget < header:
        return 0
    return (byte_budget - header) // per_update


def total_size(envelopes: Iterable[Envelope]) -> int:
    return sum(encoded_size(e) for e in envelopes)
