"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -s`` to watch the lines appear;
the learnability runs train against real solver subprocesses and dominate
the runtime (a few minutes each).
"""

import json
import math
import random
import threading
import time

import numpy as np
import pytest

from flowbridge import net, wire
from flowbridge.adapter import EnvInstance, EnvOptions
from flowbridge.cli import main
from flowbridge.launch import InProcessLauncher, assert_no_orphans
from flowbridge.scenarios import cylinder
from flowbridge.scenarios import perpendicular_flap as pf
from flowbridge.scenarios.oracle import run_opposition_oracle
from flowbridge.session import CouplingSession
from flowbridge.solvers import channel, flap, wake

from conftest import make_pair_schema, run_frame_echo_peer
from test_fsi_solvers import run_fsi_trio
from test_wire import _random_message


def report(name: str, detail: str = ""):
    line = f"ACCEPTANCE {name}: PASS"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)


@pytest.fixture(autouse=True)
def orphan_free_teardown():
    yield
    assert_no_orphans()


def test_protocol_roundtrip():
    start = time.monotonic()
    rng = random.Random(1)
    failures = 0
    for _ in range(10_000):
        msg = _random_message(rng)
        if wire.decode_frame(wire.encode_frame(msg)) != msg:
            failures += 1
    elapsed = time.monotonic() - start
    assert failures == 0
    assert elapsed < 10.0
    report("protocol round-trip", f"10000 messages, {elapsed:.2f}s")


def test_coupling_loopback():
    start = time.monotonic()
    rng = random.Random(2)
    for _ in range(100):
        nv = rng.randint(1, 64)
        comps = rng.choice([1, 2])
        schema = make_pair_schema(nv=nv, components=comps, window_size=0.5, end_time=0.5)
        ours, theirs = net.fake_pair()
        th = threading.Thread(target=run_frame_echo_peer, args=(theirs, schema), daemon=True)
        th.start()
        session = CouplingSession(schema, "controller", {"echo": ours}, timeout=10.0)
        for mesh in schema.meshes.values():
            session.set_mesh_vertices(mesh.name, mesh.vertices)
        session.initialize()
        payload = [rng.uniform(-1e12, 1e12) for _ in range(nv * comps)]
        session.write_field("Cmd", payload)
        session.advance(0.5)
        assert session.read_field("Out") == payload  # bitwise: exact list equality
        session.finalize()
        th.join(timeout=10.0)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    report("coupling loopback", f"100 random sizes, {elapsed:.2f}s")


def test_episode_accounting(tmp_path):
    start = time.monotonic()
    rng = random.Random(3)
    for trial in range(20):
        steps_expected = rng.randint(1, 12)
        k_sub = rng.randint(1, 8)
        ws = rng.choice([0.001, 0.002, 0.005, 0.01, 0.02])
        cfg = cylinder.with_overrides(
            cylinder.default_jet_config(),
            wake=wake.WakeParams(solver_dt=ws),
            window_size=ws,
            end_time=ws * k_sub * steps_expected,
            substeps_per_action=k_sub,
        )
        schema = cylinder.build_schema(cfg)
        workdir = tmp_path / f"triple_{trial}"
        workdir.mkdir()
        (workdir / "schema.json").write_text(json.dumps(json.loads(schema.canonical_json())))
        options = EnvOptions(
            environment_name="accounting",
            solvers=("fluid-wake",),
            reset_script="reset.sh",
            run_script="run.sh",
            read_from={"Probes": "probes", "Forces": "forces"},
            write_to={"jet1": "Velocity", "jet2": "Velocity"},
            base_dir=workdir,
        )
        launcher = InProcessLauncher(
            schema, {"fluid-wake": lambda links, s=schema, c=cfg: wake.run_wake_participant(links, s, c.wake)}
        )
        env = EnvInstance(options, cylinder.CylinderHooks(cfg, schema), launcher=launcher, timeout=10.0)
        env.reset()
        term_flags = []
        while True:
            result = env.step([0.0])
            term_flags.append(result.terminated)
            if result.terminated:
                break
            assert len(term_flags) < 200
        assert len(term_flags) == round(cfg.end_time / (ws * k_sub)) == steps_expected
        assert term_flags.count(True) == 1 and term_flags[-1]
        env.close()
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    report("episode accounting", f"20 random (window, end, K) triples, {elapsed:.2f}s")


def test_zero_net_actuation_end_to_end():
    rng = random.Random(4)
    cfg = cylinder.default_jet_config()
    schema = cylinder.build_schema(cfg)
    jets = (schema.meshes["jet1"], schema.meshes["jet2"])
    center = cfg.wake.cylinder_center
    q_max = cfg.wake.q_max_ref

    # mesh/action sweep: discrete flux identities
    for _ in range(100):
        a = rng.uniform(-2.0, 2.0) * q_max
        out = cylinder.jet_get_action(a, jets, center, q_max)
        f1 = cylinder.discrete_flux(out["jet1/Velocity"], jets[0], center)
        f2 = cylinder.discrete_flux(out["jet2/Velocity"], jets[1], center)
        clamped = min(max(a, -q_max), q_max)
        assert abs(f1 + f2) <= 1e-12
        assert abs(f1 - clamped) <= 1e-12

    # end to end through a real session exchange: the solver-side recovery
    short = cylinder.with_overrides(cfg, end_time=cfg.window_size * 20)
    short_schema = cylinder.build_schema(short)
    ours, theirs = net.fake_pair()
    record = {}

    def follower():
        session = CouplingSession(short_schema, "fluid-wake", {"controller": theirs}, timeout=10.0)
        for link in short_schema.links_of("fluid-wake"):
            for mesh in short_schema.meshes_on_link(link):
                session.set_mesh_vertices(mesh.name, mesh.vertices)
        session.initialize()
        us = []
        while session.is_coupling_ongoing():
            session.advance(short_schema.window_size)
            buffers = {
                "jet1/Velocity": session.read_field("jet1/Velocity"),
                "jet2/Velocity": session.read_field("jet2/Velocity"),
            }
            us.append(wake.net_actuation(buffers, short_schema, short.wake))
        record["us"] = us
        session.finalize()

    th = threading.Thread(target=follower, daemon=True)
    th.start()
    session = CouplingSession(short_schema, "controller", {"fluid-wake": ours}, timeout=10.0)
    for link in short_schema.links_of("controller"):
        for mesh in short_schema.meshes_on_link(link):
            session.set_mesh_vertices(mesh.name, mesh.vertices)
    session.initialize()
    short_jets = (short_schema.meshes["jet1"], short_schema.meshes["jet2"])
    rates = [rng.uniform(-1.5, 1.5) * q_max for _ in range(20)]
    for a in rates:
        buffers = cylinder.jet_get_action(a, short_jets, center, q_max)
        for key, values in buffers.items():
            session.write_field(key, values)
        session.advance(short_schema.window_size)
    session.finalize()
    th.join(timeout=10.0)
    assert len(record["us"]) == 20
    for a, u in zip(rates, record["us"]):
        clamped = min(max(a, -q_max), q_max)
        assert abs(u - clamped / q_max) <= 1e-12
    report("zero-net actuation", "100 flux identities + 20 coupled windows")


def test_integrator_oracle():
    start = time.monotonic()
    # wake: unactuated default episode, coarse vs tenfold-refined reference
    cfg = cylinder.default_jet_config()
    coarse_p = cfg.wake
    fine_p = wake.WakeParams(solver_dt=coarse_p.solver_dt / 10.0)
    q_c, dq_c = coarse_p.q0, coarse_p.dq0
    q_f, dq_f = fine_p.q0, fine_p.dq0
    worst = 0.0
    for _ in range(cfg.steps_per_episode * cfg.substeps_per_action):
        q_c, dq_c = wake.integrate_window(q_c, dq_c, 0.0, 0.0, cfg.window_size, coarse_p)
        q_f, dq_f = wake.integrate_window(q_f, dq_f, 0.0, 0.0, cfg.window_size, fine_p)
        worst = max(worst, abs(q_c - q_f), abs(dq_c - dq_f))
    assert worst <= 1e-6

    # flap: default episode driven by the demo sinusoid's force schedule
    fcfg = pf.default_config()
    params = fcfg.channel
    fine_params = channel.ChannelParams(solver_dt=params.solver_dt / 10.0)
    n_windows = round(fcfg.end_time / fcfg.window_size)
    forces = [
        channel.jet_force(0.4 + 0.3 * math.sin(2 * math.pi * 0.5 * (k * fcfg.window_size)), 0.0, params)
        for k in range(n_windows + 1)
    ]
    x_c = dx_c = x_f = dx_f = 0.0
    worst_flap = 0.0
    for k in range(n_windows):
        x_c, dx_c = flap.integrate_window(x_c, dx_c, forces[k], forces[k + 1], fcfg.window_size, params)
        x_f, dx_f = flap.integrate_window(x_f, dx_f, forces[k], forces[k + 1], fcfg.window_size, fine_params)
        worst_flap = max(worst_flap, abs(x_c - x_f), abs(dx_c - dx_f))
    assert worst_flap <= 1e-6
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    report("integrator oracle", f"wake worst {worst:.2e}, flap worst {worst_flap:.2e}, {elapsed:.1f}s")


def test_static_flap_oracle():
    params = channel.ChannelParams(beta=0.0)
    t_settle = 20.0 * 2.0 * math.pi / math.sqrt(params.k / params.m)
    n_windows = math.ceil(t_settle / 0.01)
    cfg = pf.FlapConfig(channel=params, end_time=n_windows * 0.01)
    x_static = params.c_f * params.U_max**2 / params.k
    tips, _ = run_fsi_trio(cfg, lambda w: params.y_flap, n_windows)
    rel = abs(tips[-1] - x_static) / x_static
    assert rel <= 0.01
    report("static-flap oracle", f"relative error {rel:.2e} after 20 natural periods")


def test_ppo_numerics():
    from test_ppo_math import finite_difference_grads, toy_batch
    from flowbridge.controllers import ppo

    # gradcheck on random small networks
    for seed in range(3):
        rng = np.random.default_rng(seed)
        params, batch = toy_batch(rng)
        _, _, grads = ppo.ppo_loss_and_grads(params, batch, 0.2, 0.5, 0.01)
        numeric = finite_difference_grads(params, batch, 0.2, 0.5, 0.01)
        for got, want in zip(grads.flat_arrays(), numeric):
            scale = np.maximum(np.abs(want), 1e-6)
            assert np.max(np.abs(got - want) / scale) <= 1e-4

    # advantage recursion vs the brute-force double sum
    rng = np.random.default_rng(10)
    for _ in range(20):
        n = int(rng.integers(1, 9))
        rewards = rng.normal(size=n)
        values = rng.normal(size=n)
        bootstrap = float(rng.normal())
        adv, _ = ppo.gae(rewards, values, np.zeros(n), bootstrap, 0.97, 0.9)
        vnext = np.append(values[1:], bootstrap)
        delta = rewards + 0.97 * vnext - values
        for t in range(n):
            brute = sum((0.97 * 0.9) ** l * delta[t + l] for l in range(n - t))
            assert abs(adv[t] - brute) <= 1e-12

    # clip hand values
    from test_ppo_math import TestClippedObjective

    tco = TestClippedObjective()
    params, batch = tco.batch_with_ratio(1.5, 1.0)
    loss, _ = ppo.ppo_loss(params, batch, 0.2, 0.0, 0.0)
    assert loss == pytest.approx(-1.2, rel=1e-9)
    params, batch = tco.batch_with_ratio(0.5, -1.0)
    loss, _ = ppo.ppo_loss(params, batch, 0.2, 0.0, 0.0)
    assert loss == pytest.approx(0.8, rel=1e-9)
    report("PPO numerics", "gradcheck, GAE double-sum, clip hand values")


def _learnability(scenario_name: str, tmp_path):
    bundle_cfg = (cylinder.default_jet_config() if scenario_name == "jet-cylinder"
                  else cylinder.default_rotating_config())
    oracle = run_opposition_oracle(bundle_cfg)
    bar = oracle.baseline_return + 0.5 * oracle.improvement

    start = time.monotonic()
    out = tmp_path / f"train-{scenario_name}"
    code = main([
        "train", scenario_name, "--envs", "4", "--episodes", "150", "--seed", "0",
        "--out", str(out),
    ])
    elapsed = time.monotonic() - start
    assert code == 0
    rows = (out / "episodes.csv").read_text().splitlines()[1:]
    returns = [float(r.split(",")[2]) for r in rows]
    assert len(returns) == 150
    first10 = sum(returns[:10]) / 10.0
    final10 = sum(returns[-10:]) / 10.0
    assert final10 > first10, f"no improvement: first10={first10}, final10={final10}"
    assert final10 >= bar, (
        f"final10 {final10:.3f} below 50% of oracle improvement "
        f"(baseline {oracle.baseline_return:.3f}, oracle {oracle.opposition_return:.3f})"
    )
    assert elapsed < 900.0
    report(
        f"learnability {scenario_name}",
        f"first10 {first10:+.3f} -> final10 {final10:+.3f}, bar {bar:+.3f}, {elapsed:.0f}s",
    )


def test_learnability_jet_cylinder(tmp_path):
    _learnability("jet-cylinder", tmp_path)


def test_learnability_rotating_cylinder(tmp_path):
    _learnability("rotating-cylinder", tmp_path)


def test_fsi_open_loop_fft(tmp_path):
    start = time.monotonic()
    out = tmp_path / "flap-demo"
    code = main(["flap-demo", "--amplitude", "0.3", "--frequency", "0.5",
                 "--duration", "10", "--out", str(out)])
    assert code == 0

    def column(path, idx):
        rows = path.read_text().splitlines()[1:]
        return np.array([float(r.split(",")[idx]) for r in rows])

    x = column(out / "timeseries.csv", 2)
    xb = column(out / "baseline.csv", 2)
    dt = 10.0 / len(x)
    spectrum = np.abs(np.fft.rfft(x - x.mean()))
    freqs = np.fft.rfftfreq(len(x), d=dt)
    peak = int(np.argmax(spectrum[1:]) + 1)
    target = 0.5 / freqs[1]
    assert abs(peak - target) <= 1.0, f"dominant peak at {freqs[peak]} Hz"

    half = len(x) // 2
    amp_ctrl = (x[half:].max() - x[half:].min()) / 2.0
    amp_base = (xb[half:].max() - xb[half:].min()) / 2.0
    assert abs(amp_ctrl - amp_base) >= 10.0 * amp_base
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    report("FSI open-loop FFT", f"peak {freqs[peak]:.2f} Hz, amp ratio {amp_ctrl / max(amp_base, 1e-12):.1f}x, {elapsed:.0f}s")


def test_cli_determinism(tmp_path):
    pairs = []
    for tag in ("a", "b"):
        out = tmp_path / f"base-{tag}"
        assert main(["baseline", "jet-cylinder", "--seed", "0", "--out", str(out)]) == 0
        pairs.append((out / "timeseries.csv").read_bytes())
    assert pairs[0] == pairs[1]

    train_files = []
    for tag in ("a", "b"):
        out = tmp_path / f"train-{tag}"
        assert main(["train", "jet-cylinder", "--envs", "2", "--episodes", "4",
                     "--seed", "7", "--out", str(out)]) == 0
        train_files.append(tuple((out / n).read_bytes()
                                 for n in ("episodes.csv", "updates.csv", "checkpoint.bin")))
    assert train_files[0] == train_files[1]
    report("determinism", "baseline and train reruns byte-identical")


def test_orphan_free_teardown_overall():
    assert_no_orphans()
    report("orphan-free teardown", "no spawned solver process outlived its episode")
