import asyncio

import pytest

from lifeguard import Config, codec
from lifeguard.agent import Agent
from lifeguard.transport import Transport, TransportError, parse_address
from lifeguard.types import Channel, Envelope, GossipUpdate, MsgKind, State


def run(coro):
    return asyncio.run(asyncio.wait_for(coro, 30))


def test_parse_address():
    assert parse_address("127.0.0.1:80") == ("127.0.0.1", 80)
    assert parse_address("[::1]:9") == ("::1", 9)
    with pytest.raises(ValueError):
        parse_address("nohost")


def test_datagram_delivered_once():
    async def main():
        async with Transport() as a, Transport() as b:
            a.send_unreliable(b.address, b"hello")
            ev = await asyncio.wait_for(b.events.get(), 2)
            assert ev.data == b"hello" and ev.channel == Channel.UNRELIABLE
            await asyncio.sleep(0.05)
            assert b.events.empty()
    run(main())


def test_oversize_datagram_rejected():
    async def main():
        async with Transport() as a:
            with pytest.raises(TransportError):
                a.send_unreliable(a.address, b"x" * 1401)
            a.send_unreliable(a.address, b"x" * 1400)
            assert len((await asyncio.wait_for(a.events.get(), 2)).data) == 1400
    run(main())


def test_unreachable_datagram_is_silent():
    async def main():
        async with Transport() as a:
            a.send_unreliable("127.0.0.1:9", b"ping")
    run(main())


def test_reliable_exchange_carries_large_payload():
    big = Envelope(MsgKind.PUSH_PULL, 1, "a:1", updates=tuple(
        GossipUpdate(State.ALIVE, f"10.0.0.{i % 250}:{7000 + i}", i, "a:1") for i in range(400)))
    data = codec.encode(big)
    assert len(data) > 1400

    async def main():
        async with Transport() as a, Transport() as b:
            async def responder():
                ev = await b.events.get()
                assert ev.channel == Channel.RELIABLE
                ev.reply.set_result(ev.data[::-1])
            task = asyncio.create_task(responder())
            reply = await a.request_reliable(b.address, data, 2.0)
            await task
            assert reply == data[::-1]
            assert codec.decode(reply[::-1]) == big
    run(main())


def test_reliable_failure_before_deadline():
    async def main():
        async with Transport() as a:
            port = a.port
        async with Transport() as b:
            loop = asyncio.get_running_loop()
            t = loop.time()
            with pytest.raises(TransportError):
                await b.request_reliable(f"127.0.0.1:{port}", b"x", 1.0)
            assert loop.time() - t < 1.0
    run(main())


def test_reliable_deadline_exceeded():
    async def main():
        async with Transport() as a, Transport() as b:
            with pytest.raises(TransportError):
                await a.request_reliable(b.address, b"x", 0.2)  # b never answers
    run(main())


FAST = dict(base_probe_interval=200, base_probe_timeout=100, gossip_interval=50,
            push_pull_interval=1000)


def test_agents_join_and_detect_failure():
    events = []

    async def main():
        cfg = Config.preset("SWIM", **FAST)
        a = Agent(cfg, "127.0.0.1:0", seed=1, emit=events.append)
        await a.start()
        b = Agent(cfg, "127.0.0.1:0", [a.address], seed=2, emit=events.append)
        await b.start()
        c = Agent(cfg, "127.0.0.1:0", [a.address], seed=3, emit=events.append)
        await c.start()
        tasks = [asyncio.create_task(x.run()) for x in (a, b, c)]
        for _ in range(100):
            await asyncio.sleep(0.05)
            if all(len(x.node.members()) == 3 for x in (a, b, c)):
                break
        views = [x.node.members() for x in (a, b, c)]
        assert all(set(v.values()) == {State.ALIVE} and len(v) == 3 for v in views)
        await c.stop()
        for _ in range(100):
            await asyncio.sleep(0.05)
            if a.node.state_of(c.address) == State.DEAD and b.node.state_of(c.address) == State.DEAD:
                break
        assert a.node.state_of(c.address) == State.DEAD
        assert b.node.state_of(c.address) == State.DEAD
        assert a.node.state_of(b.address) == State.ALIVE
        await a.stop()
        await b.stop()
        await asyncio.gather(*tasks)
        return c.address

    dead = run(main())
    assert any(e.get("member") == dead and e.get("new") == "dead" for e in events)
    assert any(e["event"] == "started" for e in events)
