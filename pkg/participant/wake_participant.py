#!/usr/bin/env python3
"""Standalone wake-oscillator participant.

A from-scratch implementation of the coupling wire protocol and the wake
surrogate model using nothing but the Python standard library.  It shares
no code with the flowbridge package; everything it needs to interoperate
is the published protocol:

* frames: "FBR1" magic, one type byte, u32 LE payload length, payload;
  HELLO(1) = u32-prefixed name + 32-byte schema digest, MESH(2) =
  u32-prefixed mesh name + f64 LE coords, INIT_ACK(3), DATA(4) =
  u32-prefixed field id + u64 LE window index + f64 LE values,
  ADVANCE(5) = u64 LE window index, FINALIZE(6), ERROR(7) = UTF-8 reason;
* schema digest: SHA-256 of the canonical JSON serialization (sorted keys,
  compact separators) of the normalized schema document;
* link k of the schema lives at base endpoint + k (TCP port offset, or a
  ".k" path suffix for local sockets); the link's "from" side listens,
  the "to" side connects with 100 ms retry backoff;
* per window the "from" side sends its DATA and ADVANCE first; this
  participant receives, integrates, and has its next outputs ready for
  the following exchange.  Outputs carry the state at the window start.

Invocation matches the in-tree solvers:

    wake_participant.py [--endpoint EP] --schema schema.json [--params p.json]

with FLOWBRIDGE_ENDPOINT honored when --endpoint is absent.  Exit code 0
on a clean run or an early peer FINALIZE, 1 on protocol violation,
divergence, or timeout.
"""

import argparse
import hashlib
import json
import math
import os
import socket
import struct
import sys
import time

MAGIC = b"FBR1"
MAX_PAYLOAD = 2 ** 28
HELLO, MESH, INIT_ACK, DATA, ADVANCE, FINALIZE, ERROR = range(1, 8)
Q_GUARD = 10.0
TIMEOUT = 30.0


class ProtocolFault(Exception):
    pass


class PeerFinalized(Exception):
    pass


# -- schema ------------------------------------------------------------------


def normalize_schema(doc):
    """Apply the same numeric coercions the reference implementation uses,
    so the canonical digest agrees byte for byte."""
    return {
        "participants": [str(p) for p in doc["participants"]],
        "links": [[a, b] for a, b in doc["links"]],
        "meshes": [
            {
                "name": m["name"],
                "dim": int(m["dim"]),
                "owner": m["owner"],
                "vertices": [[float(x) for x in v] for v in m["vertices"]],
                "face_weights": [float(w) for w in m["face_weights"]],
            }
            for m in doc["meshes"]
        ],
        "fields": [
            {"name": f["name"], "mesh": f["mesh"], "components": int(f["components"]),
             "writer": f["writer"]}
            for f in doc["fields"]
        ],
        "window_size": float(doc["window_size"]),
        "end_time": float(doc["end_time"]),
    }


def schema_digest(norm):
    blob = json.dumps(norm, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).digest()


def mesh_by_name(norm, name):
    for m in norm["meshes"]:
        if m["name"] == name:
            return m
    raise ProtocolFault("schema has no mesh %r" % name)


def mesh_owner(norm, name):
    return mesh_by_name(norm, name)["owner"]


def field_id(f):
    return "%s/%s" % (f["mesh"], f["name"])


def field_link(norm, f):
    """A field travels on the link joining its writer and its mesh owner."""
    ends = {f["writer"], mesh_owner(norm, f["mesh"])}
    for k, (a, b) in enumerate(norm["links"]):
        if {a, b} == ends:
            return k
    raise ProtocolFault("no link carries field %r" % field_id(f))


def fields_on_link(norm, k):
    return [f for f in norm["fields"] if field_link(norm, f) == k]


def link_meshes(norm, k):
    names = []
    for f in fields_on_link(norm, k):
        if f["mesh"] not in names:
            names.append(f["mesh"])
    return names


def field_size(norm, f):
    return len(mesh_by_name(norm, f["mesh"])["vertices"]) * int(f["components"])


# -- framing -----------------------------------------------------------------


def pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def frame(mtype, payload=b""):
    return MAGIC + struct.pack("<BI", mtype, len(payload)) + payload


def recv_exact(sock, n):
    chunks = []
    got = 0
    while got < n:
        try:
            chunk = sock.recv(n - got)
        except socket.timeout:
            raise ProtocolFault("read timed out")
        if not chunk:
            raise ProtocolFault("connection closed mid-stream")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_frame(sock):
    header = recv_exact(sock, 9)
    if header[:4] != MAGIC:
        raise ProtocolFault("bad frame magic %r" % header[:4])
    mtype, length = struct.unpack("<BI", header[4:])
    if mtype < HELLO or mtype > ERROR:
        raise ProtocolFault("unknown message type %d" % mtype)
    if length > MAX_PAYLOAD:
        raise ProtocolFault("oversize payload (%d bytes)" % length)
    return mtype, recv_exact(sock, length) if length else b""


def unpack_str(payload, off):
    (n,) = struct.unpack_from("<I", payload, off)
    off += 4
    return payload[off:off + n].decode("utf-8"), off + n


def unpack_floats(payload, off):
    rest = len(payload) - off
    if rest % 8:
        raise ProtocolFault("float payload not a multiple of 8 bytes")
    return struct.unpack_from("<%dd" % (rest // 8), payload, off)


# -- transport ---------------------------------------------------------------


def parse_endpoint(text):
    if text.startswith("tcp:"):
        host, _, port = text[4:].rpartition(":")
        return ("tcp", host, int(port))
    if text.startswith("local:"):
        return ("local", text[6:], None)
    raise ProtocolFault("unknown endpoint scheme %r" % text)


def link_address(base, k):
    kind, a, b = base
    if kind == "tcp":
        return ("tcp", a, b + k)
    return ("local", "%s.%d" % (a, k), None)


def connect_with_retry(address, budget=300, backoff=0.1):
    last = None
    for attempt in range(budget):
        if address[0] == "tcp":
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            target = (address[1], address[2])
        else:
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            target = address[1]
        sock.settimeout(5.0)
        try:
            sock.connect(target)
            if sock.family == socket.AF_INET:
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(TIMEOUT)
            return sock
        except OSError as exc:
            sock.close()
            last = exc
            if attempt + 1 < budget:
                time.sleep(backoff)
    raise ProtocolFault("connect failed after %d attempts: %s" % (budget, last))


# -- wake model --------------------------------------------------------------

PARAM_DEFAULTS = {
    "mu": 1.0, "omega0": 2.0 * math.pi, "g": 10.0, "cd0": 3.2, "kappa_d": 0.05,
    "kappa_l": 0.3, "solver_dt": 0.002, "actuation_mode": "jet", "q_max_ref": 2.5e-4,
    "q0": 1.0, "dq0": 0.0, "cylinder_center": (0.2, 0.2), "cylinder_diameter": 0.1,
}


def load_params(path):
    params = dict(PARAM_DEFAULTS)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if "wake" in doc:
            doc = doc["wake"]
        unknown = set(doc) - set(PARAM_DEFAULTS)
        if unknown:
            raise ProtocolFault("unknown wake parameter(s): %s" % ", ".join(sorted(unknown)))
        params.update(doc)
        params["cylinder_center"] = tuple(float(x) for x in params["cylinder_center"])
    for key in ("mu", "omega0", "g", "cd0", "kappa_d", "solver_dt", "q_max_ref",
                "cylinder_diameter"):
        if params[key] <= 0:
            raise ProtocolFault("wake parameter %r must be positive" % key)
    if params["actuation_mode"] not in ("jet", "rotation"):
        raise ProtocolFault("unknown actuation_mode %r" % params["actuation_mode"])
    if abs(params["q0"]) > Q_GUARD:
        raise ProtocolFault("initial amplitude exceeds the divergence guard")
    return params


def rhs(q, dq, u, p):
    return dq, p["mu"] * (1.0 - q * q) * dq - p["omega0"] * p["omega0"] * q + p["g"] * u


def rk4_step(q, dq, u_start, u_end, dt, p):
    u_mid = 0.5 * (u_start + u_end)
    k1q, k1d = rhs(q, dq, u_start, p)
    k2q, k2d = rhs(q + 0.5 * dt * k1q, dq + 0.5 * dt * k1d, u_mid, p)
    k3q, k3d = rhs(q + 0.5 * dt * k2q, dq + 0.5 * dt * k2d, u_mid, p)
    k4q, k4d = rhs(q + dt * k3q, dq + dt * k3d, u_end, p)
    return (
        q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
        dq + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d),
    )


def integrate_window(q, dq, u_start, u_end, window, p, n_sub):
    h = window / n_sub
    du = u_end - u_start
    for i in range(n_sub):
        ua = u_start + du * (i / n_sub)
        ub = u_start + du * ((i + 1) / n_sub)
        q, dq = rk4_step(q, dq, ua, ub, h, p)
        if not (math.isfinite(q) and math.isfinite(dq)) or abs(q) > Q_GUARD:
            raise ProtocolFault("wake amplitude diverged (q=%r)" % q)
    return q, dq


def forces(q, p):
    return p["cd0"] + p["kappa_d"] * q * q, p["kappa_l"] * q


def probe_signals(q, dq, coords, p):
    cx, cy = p["cylinder_center"]
    d_ref = p["cylinder_diameter"]
    out = []
    for x, y in coords:
        d = math.hypot(x - cx, y - cy)
        out.append(q * math.exp(-d / d_ref) + dq * math.exp(-2.0 * d / d_ref))
    return out


def net_actuation(values_by_field, norm, p):
    mesh_name = "jet1" if p["actuation_mode"] == "jet" else "cylinder"
    key = mesh_name + "/Velocity"
    if key not in values_by_field:
        raise ProtocolFault("actuation field %r missing" % key)
    values = values_by_field[key]
    if not all(math.isfinite(v) for v in values):
        raise ProtocolFault("non-finite actuation received on %r" % key)
    mesh = mesh_by_name(norm, mesh_name)
    cx, cy = p["cylinder_center"]
    if p["actuation_mode"] == "jet":
        flux = 0.0
        for i, (x, y) in enumerate(mesh["vertices"]):
            dx, dy = x - cx, y - cy
            r = math.hypot(dx, dy)
            flux += (values[2 * i] * dx / r + values[2 * i + 1] * dy / r) * mesh["face_weights"][i]
        u = flux / p["q_max_ref"]
    else:
        total = 0.0
        for i, (x, y) in enumerate(mesh["vertices"]):
            dx, dy = x - cx, y - cy
            r = math.hypot(dx, dy)
            total += ((values[2 * i] * -dy + values[2 * i + 1] * dx) / r) / r
        u = (total / len(mesh["vertices"])) / p["q_max_ref"]
    return -1.0 if u < -1.0 else 1.0 if u > 1.0 else u


# -- participant loop --------------------------------------------------------


def run(norm, params, base, participant=None):
    me = participant or mesh_owner(norm, "jet1" if params["actuation_mode"] == "jet" else "cylinder")
    my_links = [k for k, (a, b) in enumerate(norm["links"]) if me in (a, b)]
    if len(my_links) != 1:
        raise ProtocolFault("wake participant expects exactly one link, found %d" % len(my_links))
    k = my_links[0]
    a_side, b_side = norm["links"][k]
    if me == a_side:
        raise ProtocolFault("wake participant must be the connecting side of its link")

    window = norm["window_size"]
    n_windows = round(norm["end_time"] / window)
    n_sub = round(window / params["solver_dt"])
    if n_sub < 1 or abs(window / params["solver_dt"] - n_sub) > 1e-9 * max(1, n_sub):
        raise ProtocolFault("solver_dt does not divide the coupling window")

    digest = schema_digest(norm)
    my_fields = [f for f in fields_on_link(norm, k) if f["writer"] == me]
    peer_fields = {field_id(f): f for f in fields_on_link(norm, k) if f["writer"] != me}
    probe_coords = mesh_by_name(norm, "probes")["vertices"]

    sock = connect_with_retry(link_address(base, k))
    try:
        # handshake: everything out, then everything in
        sock.sendall(frame(HELLO, pack_str(me) + digest))
        for name in link_meshes(norm, k):
            coords = mesh_by_name(norm, name)["vertices"]
            flat = struct.pack("<%dd" % (2 * len(coords)), *[x for v in coords for x in v])
            sock.sendall(frame(MESH, pack_str(name) + flat))
        sock.sendall(frame(INIT_ACK))

        mtype, payload = expect(sock, HELLO)
        peer, off = unpack_str(payload, 0)
        if payload[off:] != digest:
            sock.sendall(frame(ERROR, b"schema mismatch between peers"))
            raise ProtocolFault("schema mismatch between peers")
        for name in link_meshes(norm, k):
            mtype, payload = expect(sock, MESH)
            got_name, off = unpack_str(payload, 0)
            coords = mesh_by_name(norm, name)["vertices"]
            mine = tuple(x for v in coords for x in v)
            if got_name != name or unpack_floats(payload, off) != mine:
                sock.sendall(frame(ERROR, b"mesh mismatch"))
                raise ProtocolFault("mesh %r differs between peers" % name)
        expect(sock, INIT_ACK)

        q, dq = params["q0"], params["dq0"]
        u_prev = 0.0
        for window_idx in range(n_windows):
            # outputs for this window: state at its start
            cd, cl = forces(q, params)
            out = {"forces/Forces": (cd, cl),
                   "probes/Probes": tuple(probe_signals(q, dq, probe_coords, params))}

            received = {}
            while True:
                mtype, payload = recv_frame(sock)
                if mtype == ERROR:
                    raise ProtocolFault("peer reported error: %s" % payload.decode("utf-8", "replace"))
                if mtype == FINALIZE:
                    raise PeerFinalized()
                if mtype == DATA:
                    fid, off = unpack_str(payload, 0)
                    (widx,) = struct.unpack_from("<Q", payload, off)
                    if fid not in peer_fields or fid in received:
                        sock.sendall(frame(ERROR, b"unexpected DATA"))
                        raise ProtocolFault("unexpected DATA for %r" % fid)
                    if widx != window_idx:
                        sock.sendall(frame(ERROR, b"out-of-order DATA"))
                        raise ProtocolFault("out-of-order DATA (window %d)" % widx)
                    values = unpack_floats(payload, off + 8)
                    if len(values) != field_size(norm, peer_fields[fid]):
                        sock.sendall(frame(ERROR, b"DATA size mismatch"))
                        raise ProtocolFault("DATA size mismatch for %r" % fid)
                    received[fid] = values
                elif mtype == ADVANCE:
                    (widx,) = struct.unpack("<Q", payload)
                    if widx != window_idx or set(received) != set(peer_fields):
                        sock.sendall(frame(ERROR, b"incomplete window exchange"))
                        raise ProtocolFault("incomplete window exchange")
                    break
                else:
                    sock.sendall(frame(ERROR, b"unexpected message"))
                    raise ProtocolFault("unexpected message type %d mid-window" % mtype)

            blob = b""
            for f in my_fields:
                values = out[field_id(f)]
                blob += frame(DATA, pack_str(field_id(f)) + struct.pack("<Q", window_idx)
                              + struct.pack("<%dd" % len(values), *values))
            blob += frame(ADVANCE, struct.pack("<Q", window_idx))
            sock.sendall(blob)

            u_new = net_actuation(received, norm, params)
            q, dq = integrate_window(q, dq, u_prev, u_new, window, params, n_sub)
            u_prev = u_new

        try:
            sock.sendall(frame(FINALIZE))
        except OSError:
            pass
        return 0
    except PeerFinalized:
        try:
            sock.sendall(frame(FINALIZE))
        except OSError:
            pass
        return 0
    finally:
        sock.close()


def expect(sock, wanted):
    mtype, payload = recv_frame(sock)
    if mtype == ERROR:
        raise ProtocolFault("peer reported error: %s" % payload.decode("utf-8", "replace"))
    if mtype == FINALIZE:
        raise PeerFinalized()
    if mtype != wanted:
        raise ProtocolFault("expected message type %d, got %d" % (wanted, mtype))
    return mtype, payload


def main(argv=None):
    parser = argparse.ArgumentParser(description="standalone wake-oscillator participant")
    parser.add_argument("--endpoint", help="base endpoint; defaults to FLOWBRIDGE_ENDPOINT")
    parser.add_argument("--schema", required=True)
    parser.add_argument("--params")
    parser.add_argument("--participant")
    args = parser.parse_args(argv)
    try:
        with open(args.schema, "r", encoding="utf-8") as fh:
            norm = normalize_schema(json.load(fh))
        params = load_params(args.params)
        endpoint = args.endpoint or os.environ.get("FLOWBRIDGE_ENDPOINT")
        if not endpoint:
            raise ProtocolFault("no endpoint: pass --endpoint or set FLOWBRIDGE_ENDPOINT")
        return run(norm, params, parse_endpoint(endpoint), args.participant)
    except ProtocolFault as exc:
        print("wake participant error: %s" % exc, file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print("wake participant error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
