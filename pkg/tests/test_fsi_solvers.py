"""Channel/flap solver pair: force law, ODE integration, coupled behavior."""

import math
import struct
import threading

import pytest

from flowbridge import net, wire
from flowbridge.errors import DivergenceError, SchemaError
from flowbridge.scenarios import perpendicular_flap as pf
from flowbridge.session import CouplingSession
from flowbridge.solvers import channel, flap


def test_jet_force_overlap_window():
    p = channel.ChannelParams()
    peak = p.c_f * p.U_max**2
    assert channel.jet_force(p.y_flap, 0.0, p) == pytest.approx(peak, rel=1e-15)
    assert channel.jet_force(p.y_flap + p.w_j, 0.0, p) == 0.0
    assert channel.jet_force(p.y_flap - 2 * p.w_j, 0.0, p) == 0.0
    # displacement feedback reduces the load
    assert channel.jet_force(p.y_flap, 0.5, p) == pytest.approx(peak * (1 - 0.5 * p.beta), rel=1e-15)


def test_flap_rhs_and_rk4_equilibrium():
    p = channel.ChannelParams()
    assert flap.flap_rhs(0.0, 0.0, 0.0, p) == (0.0, 0.0)
    assert flap.rk4_step(0.0, 0.0, 0.0, 0.0, 0.01, p) == (0.0, 0.0)


def test_flap_integration_against_fine_oracle():
    p = channel.ChannelParams()
    x, dx = 0.0, 0.0
    xf, dxf = 0.0, 0.0
    f_prev = 0.0
    for w in range(200):
        f_new = 0.45 * math.sin(0.3 * w)
        x, dx = flap.integrate_window(x, dx, f_prev, f_new, 0.01, p)
        fine = channel.ChannelParams(solver_dt=p.solver_dt / 10.0)
        xf, dxf = flap.integrate_window(xf, dxf, f_prev, f_new, 0.01, fine)
        f_prev = f_new
    assert abs(x - xf) <= 1e-9
    assert abs(dx - dxf) <= 1e-9


def test_flap_divergence_guard():
    p = channel.ChannelParams(k=0.0001, c=0.0, solver_dt=0.01)
    with pytest.raises(DivergenceError):
        x, dx = 0.0, 0.0
        for _ in range(100000):
            x, dx = flap.integrate_window(x, dx, 100.0, 100.0, 0.01, p)


def test_unknown_channel_param_rejected():
    with pytest.raises(SchemaError, match="unknown channel parameter"):
        channel.ChannelParams.from_dict({"bogus": 1.0})


def test_participant_inference():
    cfg = pf.default_config()
    schema = pf.build_schema(cfg)
    assert channel.infer_participant(schema) == "fluid-channel"
    assert flap.infer_participant(schema) == "solid-flap"


def run_fsi_trio(cfg, y_command, n_windows, record_solid=False):
    """Drive the real fluid+solid participants with a scripted controller.

    y_command(window_idx) -> jet center; returns (tip trace, recorded solid
    connection or None).
    """
    schema = pf.build_schema(cfg)
    c_fl, fl_c = net.fake_pair()
    fl_so, so_fl = net.fake_pair()
    if record_solid:
        so_fl = net.RecordingConnection(so_fl)

    errors = []

    def fluid():
        try:
            channel.run_channel_participant({"controller": fl_c, "solid-flap": fl_so}, schema, cfg.channel)
        except Exception as exc:
            errors.append(f"fluid: {exc}")

    def solid():
        try:
            flap.run_flap_participant({"fluid-channel": so_fl}, schema, cfg.channel)
        except Exception as exc:
            errors.append(f"solid: {exc}")

    threads = [threading.Thread(target=fluid, daemon=True), threading.Thread(target=solid, daemon=True)]
    for th in threads:
        th.start()

    session = CouplingSession(schema, "controller", {"fluid-channel": c_fl}, timeout=10.0)
    for link in schema.links_of("controller"):
        for mesh in schema.meshes_on_link(link):
            session.set_mesh_vertices(mesh.name, mesh.vertices)
    session.initialize()
    tips = []
    for w in range(n_windows):
        session.write_field("JetCenter", [y_command(w)])
        session.advance(schema.window_size)
        tips.append(session.read_field("TipDisplacement")[0])
    session.finalize()
    for th in threads:
        th.join(timeout=30.0)
        assert not th.is_alive()
    assert not errors, errors
    return tips, (so_fl if record_solid else None)


def test_static_deflection_oracle():
    # constant jet on the flap, no displacement feedback: the tip must
    # settle at c_f U^2 / k within 1% after 20 natural periods
    params = channel.ChannelParams(beta=0.0)
    n_periods = 20.0
    t_settle = n_periods * 2.0 * math.pi / math.sqrt(params.k / params.m)
    n_windows = math.ceil(t_settle / 0.01)
    cfg = pf.FlapConfig(channel=params, end_time=n_windows * 0.01)
    x_static = params.c_f * params.U_max**2 / params.k
    tips, _ = run_fsi_trio(cfg, lambda w: params.y_flap, n_windows)
    assert abs(tips[-1] - x_static) / x_static <= 0.01


def test_zero_overlap_decays():
    params = channel.ChannelParams()
    cfg = pf.FlapConfig(channel=params, end_time=2.0)
    y_off = params.y_flap + 2.0 * params.w_j  # jet entirely off the flap
    tips, _ = run_fsi_trio(cfg, lambda w: y_off, 200)
    assert max(abs(t) for t in tips) == 0.0  # never loaded, never moves


def _decode_stream(blob):
    msgs = []
    offset = 0
    while offset + wire.HEADER_SIZE <= len(blob):
        mtype, length = wire.decode_header(blob[offset : offset + wire.HEADER_SIZE])
        payload = blob[offset + wire.HEADER_SIZE : offset + wire.HEADER_SIZE + length]
        msgs.append(wire.decode_payload(mtype, payload))
        offset += wire.HEADER_SIZE + length
    return msgs


def test_force_conservation_bitwise():
    # every Force value decoded on the solid's side equals the fluid's force
    # law applied to the inputs the fluid received one window earlier; the
    # wire must not perturb a single bit
    params = channel.ChannelParams()
    cfg = pf.FlapConfig(channel=params, end_time=0.5)
    y_cmd = lambda w: params.y_flap + 0.2 * math.sin(0.2 * w)
    _, recorded = run_fsi_trio(cfg, y_cmd, 50, record_solid=True)

    forces_seen = [
        m.values[0]
        for m in _decode_stream(b"".join(recorded.received))
        if isinstance(m, wire.Data) and m.field == "flap-load/Force"
    ]
    disps_sent = [
        m.values[0]
        for m in _decode_stream(b"".join(recorded.sent))
        if isinstance(m, wire.Data) and m.field == "flap-tip/Displacement"
    ]
    assert len(forces_seen) == 50 and len(disps_sent) == 50
    assert forces_seen[0] == 0.0  # nothing known before the first exchange
    for k in range(1, 50):
        expected = channel.jet_force(y_cmd(k - 1), disps_sent[k - 1], params)
        assert struct.pack("<d", forces_seen[k]) == struct.pack("<d", expected)
