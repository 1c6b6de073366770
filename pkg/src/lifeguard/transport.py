"""Real-network transport: UDP datagrams plus TCP request/response.

One UDP socket and one TCP listener share a ``host:port`` address. Every
inbound datagram or reliable request becomes a :class:`TransportEvent` on a
single asyncio queue, so the consumer sees events one at a time in arrival
order. A reliable request's event carries a future the consumer resolves
with the response bytes (or ``None`` for no response).

Reliable frames are a 4-byte big-endian length followed by the payload; one
request and at most one response per connection.
"""

from __future__ import annotations

import asyncio
import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .codec import MAX_DATAGRAM
from .types import Channel

log = logging.getLogger(__name__)

_FRAME = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024
REPLY_TIMEOUT = 30.0  # seconds a served connection waits for the consumer


class TransportError(Exception):
    pass


def parse_address(addr: str) -> Tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected host:port, got {addr!r}")
    try:
        return host.strip("[]"), int(port)
    except ValueError:
        raise ValueError(f"bad port in {addr!r}") from None


@dataclass
class TransportEvent:
    arrival: float
    source: str
    data: bytes
    channel: Channel
    reply: Optional[asyncio.Future] = field(default=None, repr=False)


class _Datagrams(asyncio.DatagramProtocol):
    def __init__(self, owner: "Transport"):
        self.owner = owner

    def datagram_received(self, data, addr):
        self.owner._inbound(TransportEvent(time.monotonic(), f"{addr[0]}:{addr[1]}",
                                           bytes(data), Channel.UNRELIABLE))

    def error_received(self, exc):
        # ICMP unreachable and friends: the failure detector deals with it
        log.debug("datagram error: %s", exc)


async def _read_frame(reader: asyncio.StreamReader) -> bytes:
    (n,) = _FRAME.unpack(await reader.readexactly(_FRAME.size))
    if n > MAX_FRAME:
        raise TransportError(f"frame of {n} bytes exceeds limit")
    return await reader.readexactly(n)


def _frame(data: bytes) -> bytes:
    return _FRAME.pack(len(data)) + data


class Transport:
    def __init__(self, bind: str = "127.0.0.1:0", max_datagram: int = MAX_DATAGRAM):
        self.host, self.port = parse_address(bind)
        self.max_datagram = max_datagram
        self.events: asyncio.Queue = asyncio.Queue()
        self._udp: Optional[asyncio.DatagramTransport] = None
        self._server: Optional[asyncio.base_events.Server] = None

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    async def start(self) -> "Transport":
        loop = asyncio.get_running_loop()
        # Bind TCP first so port 0 resolves to one port used by both sockets.
        self._server = await asyncio.start_server(self._serve, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._udp, _ = await loop.create_datagram_endpoint(
            lambda: _Datagrams(self), local_addr=(self.host, self.port))
        return self

    async def close(self) -> None:
        if self._udp is not None:
            self._udp.close()
            self._udp = None
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def __aenter__(self):
        return await self.start()

    async def __aexit__(self, *exc):
        await self.close()

    def _inbound(self, event: TransportEvent) -> None:
        self.events.put_nowait(event)

    # -- unreliable ----------------------------------------------------------

    def send_unreliable(self, dest: str, data: bytes) -> None:
        """Fire and forget. Oversize payloads are refused here."""
        if len(data) > self.max_datagram:
            raise TransportError(f"datagram of {len(data)} bytes exceeds {self.max_datagram}")
        if self._udp is None:
            raise TransportError("transport not started")
        try:
            self._udp.sendto(data, parse_address(dest))
        except (OSError, ValueError) as exc:
            log.debug("dropping datagram to %s: %s", dest, exc)

    # -- reliable ------------------------------------------------------------

    async def request_reliable(self, dest: str, data: bytes, deadline: float) -> bytes:
        """Send ``data`` over TCP and wait up to ``deadline`` seconds for the reply.

        Returns the response bytes (empty if the peer sent none). Any connect
        failure, reset or timeout raises TransportError.
        """
        try:
            return await asyncio.wait_for(self._exchange(dest, data), deadline)
        except asyncio.TimeoutError:
            raise TransportError(f"no reply from {dest} within {deadline:.3f}s") from None
        except (OSError, asyncio.IncompleteReadError, ValueError) as exc:
            raise TransportError(f"reliable exchange with {dest} failed: {exc}") from exc

    async def _exchange(self, dest: str, data: bytes) -> bytes:
        host, port = parse_address(dest)
        reader, writer = await asyncio.open_connection(host, port)
        try:
            writer.write(_frame(data))
            await writer.drain()
            try:
                return await _read_frame(reader)
            except asyncio.IncompleteReadError as exc:
                if exc.partial == b"":
                    return b""
                raise
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except OSError:
                pass

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        source = f"{peer[0]}:{peer[1]}" if peer else "?"
        try:
            data = await _read_frame(reader)
            reply: asyncio.Future = asyncio.get_running_loop().create_future()
            self._inbound(TransportEvent(time.monotonic(), source, data, Channel.RELIABLE, reply))
            response = await asyncio.wait_for(reply, REPLY_TIMEOUT)
            if response:
                writer.write(_frame(response))
                await writer.drain()
        except (asyncio.IncompleteReadError, asyncio.TimeoutError, ConnectionError,
                TransportError) as exc:
            log.debug("reliable request from %s dropped: %s", source, exc)
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except OSError:
                pass
