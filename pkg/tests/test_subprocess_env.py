"""Real process orchestration: scripts, sockets, logs, teardown."""

import shutil
import time
from pathlib import Path

import pytest

from flowbridge import scenarios
from flowbridge.adapter import EnvInstance
from flowbridge.errors import EnvError
from flowbridge.launch import SPAWNED_PROCESSES, assert_no_orphans
from flowbridge.scenarios import cylinder
from flowbridge.scenarios.oracle import simulate_cylinder_episode


def materialize(tmp_path, name="jet-cylinder", **overrides):
    bundle = scenarios.get(name)
    if overrides:
        cfg = cylinder.with_overrides(bundle.config, **overrides)
        bundle = cylinder._scenario(cfg, name)
    asset_dir = bundle.write_assets(tmp_path / name)
    options = bundle.load_env_options(asset_dir)
    hooks = bundle.make_hooks()
    return options, hooks, bundle


def test_full_episode_over_real_sockets(tmp_path):
    options, hooks, bundle = materialize(
        tmp_path, end_time=0.1, substeps_per_action=5
    )
    env = EnvInstance(options, hooks, idx=0, timeout=20.0)
    try:
        obs, _ = env.reset(seed=0)
        assert len(obs) == bundle.config.n_probes
        cds = []
        terminated = False
        steps = 0
        while not terminated:
            result = env.step([0.0])
            cds.extend(b["forces/Forces"][0] for _, b in env.last_step_trace)
            terminated = result.terminated
            steps += 1
        assert steps == 10
        reference = simulate_cylinder_episode(bundle.config, controller=None)
        assert cds == reference.cds  # bitwise across process + socket boundary
    finally:
        env.close()
    assert_no_orphans()


def test_instance_directory_layout(tmp_path):
    options, hooks, _ = materialize(tmp_path, end_time=0.01, substeps_per_action=1)
    env = EnvInstance(options, hooks, idx=3, timeout=20.0)
    try:
        env.reset()
        solver_dir = tmp_path / "jet-cylinder" / "runs" / "env_3" / "fluid-wake"
        assert solver_dir.is_dir()
        assert (solver_dir / "run.sh").exists()
        logs = list(solver_dir.glob("episode_*.err"))
        assert logs, "per-episode log files must exist"
    finally:
        env.close()
    assert_no_orphans()


def test_reset_script_failure_reported(tmp_path):
    options, hooks, _ = materialize(tmp_path, end_time=0.01, substeps_per_action=1)
    bad = tmp_path / "jet-cylinder" / "fluid-wake" / "reset.sh"
    bad.write_text("#!/usr/bin/env bash\necho boom >&2\nexit 1\n")
    env = EnvInstance(options, hooks, idx=0, timeout=20.0)
    with pytest.raises(EnvError, match="reset.sh"):
        env.reset()
    env.close()
    assert_no_orphans()


def test_child_crash_embeds_stderr_tail(tmp_path):
    options, hooks, _ = materialize(tmp_path, end_time=0.01, substeps_per_action=1)
    bad = tmp_path / "jet-cylinder" / "fluid-wake" / "run.sh"
    bad.write_text("#!/usr/bin/env bash\necho 'solver exploded' >&2\nexit 3\n")
    env = EnvInstance(options, hooks, idx=0, timeout=20.0)
    with pytest.raises(EnvError, match="solver exploded"):
        env.reset()
    env.close()
    assert_no_orphans()


def test_close_mid_episode_kills_children(tmp_path):
    options, hooks, _ = materialize(tmp_path, end_time=2.0, substeps_per_action=50)
    env = EnvInstance(options, hooks, idx=0, timeout=20.0)
    env.reset()
    children = list(env.launcher.children.values())
    assert children and all(c.poll() is None for c in children)
    env.close()
    deadline = time.monotonic() + 5.0
    while time.monotonic() < deadline and any(c.poll() is None for c in children):
        time.sleep(0.02)
    assert all(c.poll() is not None for c in children)
    assert_no_orphans()


def test_local_socket_endpoint(tmp_path):
    options, hooks, _ = materialize(tmp_path, end_time=0.02, substeps_per_action=2)
    env = EnvInstance(
        options, hooks, idx=0, timeout=20.0,
        endpoint_base=f"local:{tmp_path}/link",
    )
    try:
        env.reset()
        result = env.step([0.0])
        assert len(result.observation) == hooks.cfg.n_probes
    finally:
        env.close()
    assert_no_orphans()


def test_fsi_trio_over_real_sockets(tmp_path):
    from flowbridge.scenarios import perpendicular_flap as pf

    bundle = scenarios.get("perpendicular-flap")
    cfg = pf.with_overrides(bundle.config, end_time=0.5)
    bundle = type(bundle)(
        name=bundle.name,
        config=cfg,
        schema_builder=lambda: pf.build_schema(cfg),
        hooks_factory=lambda schema: pf.FlapHooks(cfg, schema),
        params_builder=lambda: pf.params_doc(cfg),
        solvers=bundle.solvers,
    )
    asset_dir = bundle.write_assets(tmp_path / "perpendicular-flap")
    options = bundle.load_env_options(asset_dir)
    env = EnvInstance(options, bundle.make_hooks(), idx=0, timeout=20.0)
    try:
        obs, _ = env.reset(seed=1)
        assert obs == [0.0]
        terminated = False
        steps = 0
        while not terminated:
            result = env.step([cfg.channel.y_flap])
            terminated = result.terminated
            steps += 1
        assert steps == cfg.steps_per_episode
        assert abs(result.observation[0]) > 0.0  # the flap moved
    finally:
        env.close()
    assert_no_orphans()
