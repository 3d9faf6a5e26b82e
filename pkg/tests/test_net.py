"""Transports: endpoint parsing, sockets with retry, the in-process pair."""

import threading
import time

import pytest

from flowbridge import net, wire
from flowbridge.errors import CouplingError


def test_parse_tcp_endpoint():
    ep = net.parse_endpoint("tcp:127.0.0.1:4521")
    assert (ep.kind, ep.host, ep.port) == ("tcp", "127.0.0.1", 4521)
    assert str(ep) == "tcp:127.0.0.1:4521"


def test_parse_local_endpoint(tmp_path):
    ep = net.parse_endpoint(f"local:{tmp_path}/x.sock")
    assert ep.kind == "local" and ep.path.endswith("x.sock")


@pytest.mark.parametrize("bad", ["tcp:nohost", "local:", "udp:1:2", "tcp:h:notaport"])
def test_parse_rejects_malformed(bad):
    with pytest.raises(CouplingError):
        net.parse_endpoint(bad)


def test_link_endpoint_derivation(tmp_path):
    base = net.parse_endpoint("tcp:127.0.0.1:5000")
    assert net.link_endpoint(base, 2).port == 5002
    base = net.parse_endpoint(f"local:{tmp_path}/s")
    assert net.link_endpoint(base, 1).path.endswith("s.1")


def test_fake_pair_roundtrip():
    a, b = net.fake_pair()
    a.send_msg(wire.Data("f", 0, (1.0, 2.0)))
    assert b.recv_msg(1.0) == wire.Data("f", 0, (1.0, 2.0))


def test_fake_pair_preserves_order():
    a, b = net.fake_pair()
    for i in range(20):
        a.send_msg(wire.Advance(i))
    for i in range(20):
        assert b.recv_msg(1.0) == wire.Advance(i)


def test_fake_pair_eof_after_close():
    a, b = net.fake_pair()
    a.close()
    with pytest.raises(CouplingError, match="closed"):
        b.recv_msg(1.0)


def test_fake_pair_cross_thread():
    a, b = net.fake_pair()
    got = []

    def reader():
        for _ in range(50):
            got.append(b.recv_msg(5.0))

    th = threading.Thread(target=reader)
    th.start()
    for i in range(50):
        a.send_msg(wire.Advance(i))
    th.join(timeout=5.0)
    assert got == [wire.Advance(i) for i in range(50)]


def test_tcp_listen_accept_exchange():
    listener = net.listen(net.parse_endpoint("tcp:127.0.0.1:0"))
    try:
        results = {}

        def client():
            conn = net.connect(listener.endpoint, retry_budget=5)
            conn.send_msg(wire.Hello("solver", b"\x00" * 32))
            results["reply"] = conn.recv_msg(5.0)
            conn.close()

        th = threading.Thread(target=client)
        th.start()
        server = listener.accept(5.0)
        assert server.recv_msg(5.0) == wire.Hello("solver", b"\x00" * 32)
        server.send_msg(wire.InitAck())
        th.join(timeout=5.0)
        server.close()
        assert results["reply"] == wire.InitAck()
    finally:
        listener.close()


def test_connect_retries_until_listener_appears():
    probe = net.listen(net.parse_endpoint("tcp:127.0.0.1:0"))
    ep = probe.endpoint
    probe.close()  # port free again; client must retry until we rebind

    holder = {}

    def late_listener():
        time.sleep(0.6)
        holder["listener"] = net.listen(ep)
        holder["conn"] = holder["listener"].accept(5.0)

    th = threading.Thread(target=late_listener)
    th.start()
    conn = net.connect(ep, retry_budget=100)
    conn.send_msg(wire.Finalize())
    th.join(timeout=5.0)
    assert holder["conn"].recv_msg(5.0) == wire.Finalize()
    conn.close()
    holder["conn"].close()
    holder["listener"].close()


def test_connect_budget_exhausted():
    probe = net.listen(net.parse_endpoint("tcp:127.0.0.1:0"))
    ep = probe.endpoint
    probe.close()
    start = time.monotonic()
    with pytest.raises(CouplingError, match="after 1 attempts"):
        net.connect(ep, retry_budget=1)
    assert time.monotonic() - start < 2.0


def test_second_connection_waits_for_accept():
    listener = net.listen(net.parse_endpoint("tcp:127.0.0.1:0"))
    try:
        c1 = net.connect(listener.endpoint, retry_budget=3)
        c2 = net.connect(listener.endpoint, retry_budget=3)
        s1 = listener.accept(5.0)
        c1.send_msg(wire.Advance(1))
        assert s1.recv_msg(5.0) == wire.Advance(1)
        # nothing has accepted c2 yet, so no reply can arrive
        with pytest.raises(CouplingError, match="timed out"):
            c2.recv_msg(0.2)
        s2 = listener.accept(5.0)
        s2.send_msg(wire.Advance(2))
        assert c2.recv_msg(5.0) == wire.Advance(2)
        for c in (c1, c2, s1, s2):
            c.close()
    finally:
        listener.close()


def test_local_socket_exchange(tmp_path):
    listener = net.listen(net.parse_endpoint(f"local:{tmp_path}/link.sock"))
    try:
        th_result = {}

        def client():
            conn = net.connect(listener.endpoint, retry_budget=10)
            conn.send_msg(wire.Advance(7))
            th_result["ok"] = True
            conn.close()

        th = threading.Thread(target=client)
        th.start()
        server = listener.accept(5.0)
        assert server.recv_msg(5.0) == wire.Advance(7)
        th.join(timeout=5.0)
        server.close()
        assert th_result.get("ok")
    finally:
        listener.close()
