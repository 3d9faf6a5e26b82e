"""Shared test fixtures: schema builders and in-process peers."""

import json
import threading

import pytest

from flowbridge import net, wire
from flowbridge.errors import CouplingError, PeerFinalized
from flowbridge.schema import load_schema


def pair_schema_doc(nv=3, components=1, window_size=0.1, end_time=0.3):
    """Two participants, one actuation field and one observation field of
    equal size, so a frame-level peer can echo one into the other."""
    verts = [[0.1 * i, 0.0] for i in range(nv)]
    weights = [1.0] * nv
    return {
        "participants": ["controller", "echo"],
        "links": [["controller", "echo"]],
        "meshes": [
            {"name": "act", "dim": 2, "owner": "echo", "vertices": verts, "face_weights": weights},
            {"name": "obs", "dim": 2, "owner": "controller", "vertices": verts, "face_weights": weights},
        ],
        "fields": [
            {"name": "Cmd", "mesh": "act", "components": components, "writer": "controller"},
            {"name": "Out", "mesh": "obs", "components": components, "writer": "echo"},
        ],
        "window_size": window_size,
        "end_time": end_time,
    }


def make_pair_schema(**kwargs):
    return load_schema(json.dumps(pair_schema_doc(**kwargs)))


def run_frame_echo_peer(conn, schema, fail=None):
    """Frame-level peer for the controller side of a two-participant schema.

    Handles the handshake, then echoes every Cmd DATA payload straight back
    as the Out field with the same window index.  ``fail`` may name a fault
    to inject: "digest", "data-window", or "advance-window".
    """
    digest = schema.digest() if fail != "digest" else bytes(32)
    try:
        hello = conn.recv_msg(10.0)
        if isinstance(hello, (wire.Finalize, wire.Error)):
            return
        assert isinstance(hello, wire.Hello)
        conn.send_msg(wire.Hello("echo", digest))
        link = schema.links[0]
        meshes = {m.name: m for m in schema.meshes_on_link(link)}
        for _ in range(len(meshes)):
            msg = conn.recv_msg(10.0)
            assert isinstance(msg, wire.Mesh)
        for m in schema.meshes_on_link(link):
            flat = tuple(x for v in m.vertices for x in v)
            conn.send_msg(wire.Mesh(m.name, flat))
        ack = conn.recv_msg(10.0)
        assert isinstance(ack, wire.InitAck)
        conn.send_msg(wire.InitAck())

        windows_served = 0
        while True:
            msg = conn.recv_msg(10.0)
            if isinstance(msg, (wire.Finalize, wire.Error)):
                return
            if isinstance(msg, wire.Data):
                window = msg.window + 1 if fail == "data-window" else msg.window
                conn.send_msg(wire.Data("obs/Out", window, msg.values))
            elif isinstance(msg, wire.Advance):
                window = msg.window + 1 if fail == "advance-window" else msg.window
                conn.send_msg(wire.Advance(window))
                windows_served += 1
                if fail == "die-after-1" and windows_served >= 1:
                    return
    except (CouplingError, PeerFinalized):
        pass
    finally:
        conn.close()


@pytest.fixture
def echo_pair():
    """(controller connection, echo thread) over the in-process transport."""
    threads = []

    def start(schema, fail=None):
        ours, theirs = net.fake_pair()
        th = threading.Thread(target=run_frame_echo_peer, args=(theirs, schema, fail), daemon=True)
        th.start()
        threads.append(th)
        return ours

    yield start
    for th in threads:
        th.join(timeout=10.0)
        assert not th.is_alive(), "echo peer did not shut down"
