"""Host one protocol node on the real network.

The agent owns the only event loop that touches the node: datagrams,
reliable requests, timer expiries and results of outgoing reliable
exchanges all funnel through one queue and are handled strictly one after
another. Membership changes are written as JSON lines.
"""

from __future__ import annotations

import asyncio
import json
import logging
import random
import sys
import time
from typing import Callable, Iterable, List, Optional

from . import codec
from .config import Config
from .core.node import Node
from .transport import Transport, TransportError, TransportEvent
from .types import Channel, Envelope, Send, SetTimer, StateChange

log = logging.getLogger(__name__)


def _json_printer(stream=None) -> Callable[[dict], None]:
    def emit(record: dict) -> None:
        out = stream or sys.stdout
        out.write(json.dumps(record, sort_keys=True) + "\n")
        out.flush()
    return emit


class Agent:
    def __init__(self, config: Config, bind: str = "127.0.0.1:7946", join: Iterable[str] = (),
                 seed: Optional[int] = None, emit: Optional[Callable[[dict], None]] = None):
        self.config = config
        self.transport = Transport(bind, config.max_datagram)
        self.join_addrs = [j for j in join if j]
        self.seed = seed
        self.emit = emit or _json_printer()
        self.node: Optional[Node] = None
        self._t0 = 0.0
        self._stopped = asyncio.Event()
        self.decode_errors = 0

    @property
    def address(self) -> str:
        return self.transport.address

    def now(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    async def start(self) -> None:
        await self.transport.start()
        self._t0 = time.monotonic()
        rng = random.Random(self.seed)
        self.node = Node(self.address, self.config, rng)
        self.emit({"event": "started", "member": self.address, "config": self.config.name})
        self._handle(self.node.start(0.0))
        if self.join_addrs:
            self._handle(self.node.join(self.join_addrs, self.now()))

    async def stop(self) -> None:
        self._stopped.set()
        await self.transport.close()

    async def run(self, duration: Optional[float] = None) -> None:
        """Process events until stopped (or for ``duration`` seconds)."""
        if self.node is None:
            await self.start()
        deadline = None if duration is None else time.monotonic() + duration
        events = self.transport.events
        while not self._stopped.is_set():
            timeout = None if deadline is None else max(0.0, deadline - time.monotonic())
            try:
                item = await asyncio.wait_for(events.get(), timeout)
            except asyncio.TimeoutError:
                break
            self._dispatch(item)
        await self.stop()

    # -- event handling --------------------------------------------------------

    def _dispatch(self, item) -> None:
        if isinstance(item, TransportEvent):
            self._on_transport(item)
        elif item[0] == "timer":
            self._handle(self.node.handle_timer(item[1], self.now()))
        elif item[0] == "reply":
            self._handle(self.node.on_message(item[1], self.now(), Channel.RELIABLE))

    def _on_transport(self, ev: TransportEvent) -> None:
        try:
            env = codec.decode(ev.data)
        except codec.CodecError as exc:
            self.decode_errors += 1
            log.debug("undecodable message from %s: %s", ev.source, exc)
            if ev.reply is not None and not ev.reply.done():
                ev.reply.set_result(None)
            return
        out = self.node.on_message(env, self.now(), ev.channel)
        if ev.reply is not None:
            # The first reliable reply to the requester answers its request.
            response = None
            for i, o in enumerate(out):
                if isinstance(o, Send) and o.channel == Channel.RELIABLE and o.dest == env.sender:
                    response = codec.encode(o.envelope)
                    del out[i]
                    break
            if not ev.reply.done():
                ev.reply.set_result(response)
        self._handle(out)

    def _handle(self, outputs: List) -> None:
        loop = asyncio.get_running_loop()
        for o in outputs:
            if isinstance(o, Send):
                self._send(o)
            elif isinstance(o, SetTimer):
                delay = max(0.0, (o.fire_at - self.now()) / 1000.0)
                loop.call_later(delay, self.transport.events.put_nowait, ("timer", o.timer))
            elif isinstance(o, StateChange):
                self.emit({"event": "state", "t_ms": round(self.now(), 3), "member": o.member,
                           "old": None if o.old is None else o.old.name.lower(),
                           "new": o.new.name.lower(), "incarnation": o.incarnation})

    def _send(self, send: Send) -> None:
        if send.channel == Channel.UNRELIABLE:
            try:
                self.transport.send_unreliable(send.dest, codec.encode(send.envelope,
                                                                       self.config.max_datagram))
            except (TransportError, codec.CodecError) as exc:
                log.warning("not sent to %s: %s", send.dest, exc)
            return
        deadline = self.node.probe_timeout() / 1000.0
        asyncio.get_running_loop().create_task(self._reliable(send.dest, send.envelope, deadline))

    async def _reliable(self, dest: str, env: Envelope, deadline: float) -> None:
        try:
            data = await self.transport.request_reliable(dest, codec.encode(env), deadline)
        except TransportError as exc:
            log.debug("reliable %s to %s failed: %s", env.kind.name, dest, exc)
            return
        if not data:
            return
        try:
            reply = codec.decode(data)
        except codec.CodecError:
            self.decode_errors += 1
            return
        self.transport.events.put_nowait(("reply", reply))


async def run_agent(config: Config, bind: str, join: Iterable[str] = (),
                    duration: Optional[float] = None, seed: Optional[int] = None,
                    emit: Optional[Callable[[dict], None]] = None) -> Agent:
    agent = Agent(config, bind, join, seed, emit)
    await agent.start()
    try:
        await agent.run(duration)
    finally:
        await agent.stop()
    return agent
