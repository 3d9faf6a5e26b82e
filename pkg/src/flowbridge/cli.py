"""Operator entry point.

    flowbridge baseline  <scenario> [--seed S] [--out DIR]
    flowbridge train     <scenario> [--config PATH] [--seed S] [--envs N]
                         [--episodes E] [--out DIR]
    flowbridge evaluate  <scenario> --checkpoint PATH [--duration T] [--out DIR]
    flowbridge flap-demo [--amplitude A] [--frequency F] [--duration T] [--out DIR]

Every run materializes its case directory (configs, schema, solver
scripts) under the output directory, writes a manifest before any child
process starts, and streams CSV rows as they happen so a crashed run
leaves inspectable partial data.  Outputs carry no timestamps, so reruns
with the same seed are byte-identical.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__, scenarios
from .adapter import EnvInstance
from .errors import ConfigError, FlowbridgeError
from .launch import assert_no_orphans
from .scenarios import cylinder as cylinder_mod
from .scenarios import perpendicular_flap as flap_mod

CYLINDER_SCENARIOS = ("jet-cylinder", "rotating-cylinder")
ALL_SCENARIOS = CYLINDER_SCENARIOS + ("perpendicular-flap",)


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


class CsvWriter:
    """Line-buffered CSV with repr-formatted floats (deterministic bytes)."""

    def __init__(self, path: Path, header: list[str]):
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._fh.write(",".join(header) + "\n")
        self._fh.flush()

    def row(self, *values) -> None:
        self._fh.write(",".join(_fmt(v) for v in values) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5.0,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def make_out_dir(args, scenario: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = Path("runs") / f"{scenario}-seed{getattr(args, 'seed', 0)}-{stamp}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, scenario: str, args, extra: dict | None = None) -> None:
    manifest = {
        "scenario": scenario,
        "seed": getattr(args, "seed", None),
        "version": version_string(),
        "out_dir": str(out),
        "started_unix": time.time(),
        "started_local": time.strftime("%Y-%m-%d %H:%M:%S"),
        "argv": sys.argv[1:],
        "config_paths": {
            "options": str(out / "case" / "gymprecice-config.json"),
            "schema": str(out / "case" / "schema.json"),
            "params": str(out / "case" / "params.json"),
        },
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def materialize_case(scenario: str, out: Path, config_path: str | None, cfg_overrides: dict):
    """Build the case directory and return (bundle, options, hooks).

    With --config the user's case directory is used as-is (params.json and
    schema.json must sit beside the options file); otherwise the packaged
    scenario assets are written under <out>/case, with any overrides
    (episode duration, for instance) applied first.
    """
    bundle = scenarios.get(scenario)
    if config_path is not None:
        options_path = Path(config_path)
        case_dir = options_path.parent
        params = json.loads((case_dir / "params.json").read_text())
        if scenario in CYLINDER_SCENARIOS:
            cfg = cylinder_mod.config_from_params_doc(params)
        else:
            cfg = flap_mod.config_from_params_doc(params)
        if cfg_overrides:
            cfg = replace(cfg, **cfg_overrides)
            bundle = _rebundle(scenario, cfg)
            case_dir = bundle.write_assets(out / "case")
            options = bundle.load_env_options(case_dir)
        else:
            bundle = _rebundle(scenario, cfg)
            options = bundle.load_env_options(case_dir)
        return bundle, options
    cfg = bundle.config
    if cfg_overrides:
        cfg = replace(cfg, **cfg_overrides)
    bundle = _rebundle(scenario, cfg)
    case_dir = bundle.write_assets(out / "case")
    return bundle, bundle.load_env_options(case_dir)


def _rebundle(scenario: str, cfg):
    from .scenarios.assets import ScenarioBundle

    if scenario in CYLINDER_SCENARIOS:
        return ScenarioBundle(
            name=scenario,
            config=cfg,
            schema_builder=lambda: cylinder_mod.build_schema(cfg),
            hooks_factory=lambda schema: cylinder_mod.CylinderHooks(cfg, schema),
            params_builder=lambda: cylinder_mod.params_doc(cfg),
            solvers={cylinder_mod.SOLVER_NAME: "flowbridge.solvers.wake"},
        )
    return ScenarioBundle(
        name=scenario,
        config=cfg,
        schema_builder=lambda: flap_mod.build_schema(cfg),
        hooks_factory=lambda schema: flap_mod.FlapHooks(cfg, schema),
        params_builder=lambda: flap_mod.params_doc(cfg),
        solvers={
            flap_mod.FLUID_NAME: "flowbridge.solvers.channel",
            flap_mod.SOLID_NAME: "flowbridge.solvers.flap",
        },
    )


def run_episode(env: EnvInstance, action_fn, on_step=None):
    """Roll one full episode; action_fn(step_idx, t, obs) -> action vector."""
    obs, _ = env.reset()
    step_idx = 0
    t = 0.0
    total_reward = 0.0
    terminated = False
    step_dt = env.hooks.substeps_per_action * env.schema.window_size
    while not terminated:
        action = action_fn(step_idx, t, obs)
        result = env.step(action)
        if on_step:
            on_step(step_idx, action, result, env)
        total_reward += result.reward
        obs = result.observation
        step_idx += 1
        t = step_idx * step_dt
        terminated = result.terminated
    return step_idx, total_reward


def cylinder_timeseries(writer: CsvWriter, env: EnvInstance, extra_reward: bool):
    space = env.hooks.action_space

    def on_step(step_idx, action, result, env):
        for (t_window, buffers), sub in zip(env.last_step_trace, env.last_substep_actions):
            applied = space.clamp(sub)[0]
            forces = buffers["forces/Forces"]
            if extra_reward:
                writer.row(t_window, applied, forces[0], forces[1], result.reward)
            else:
                writer.row(t_window, applied, forces[0], forces[1])

    return on_step


def flap_timeseries(writer: CsvWriter, env: EnvInstance):
    space = env.hooks.action_space

    def on_step(step_idx, action, result, env):
        for (t_window, buffers), sub in zip(env.last_step_trace, env.last_substep_actions):
            applied = space.clamp(sub)[0]
            writer.row(t_window, applied, buffers["tip-probe/TipDisplacement"][0])

    return on_step


def cmd_baseline(args) -> int:
    scenario = args.scenario
    out = make_out_dir(args, scenario)
    write_manifest(out, scenario, args)
    bundle, options = materialize_case(scenario, out, args.config, {})
    hooks = bundle.make_hooks()
    is_flap = scenario == "perpendicular-flap"
    header = ["t", "y_c", "x_tip"] if is_flap else ["t", "action", "cd", "cl"]
    writer = CsvWriter(out / "timeseries.csv", header)
    env = EnvInstance(options, hooks, idx=0, timeout=args.timeout)
    try:
        on_step = flap_timeseries(writer, env) if is_flap else cylinder_timeseries(writer, env, False)
        if is_flap:
            y0 = bundle.config.y0
            steps, total = run_episode(env, lambda s, t, o: [y0], on_step)
        else:
            steps, total = run_episode(env, lambda s, t, o: [0.0], on_step)
        print(f"baseline episode: {steps} steps, return {total!r}")
        if not is_flap:
            cfg = bundle.config
            print(f"configured cd_base {cfg.cd_base!r} (reward drag zero point)")
        return 0
    finally:
        writer.close()
        env.close()
        assert_no_orphans()


def cmd_train(args) -> int:
    from .controllers import PPOConfig, train
    from .controllers.checkpoint import save_checkpoint
    from .vecenv import make_vec

    scenario = args.scenario
    out = make_out_dir(args, scenario)
    write_manifest(out, scenario, args, extra={"envs": args.envs, "episodes": args.episodes})
    bundle, options = materialize_case(scenario, out, args.config, {})
    schema = bundle.schema()
    config = PPOConfig(
        n_envs=args.envs,
        n_steps=bundle.config.steps_per_episode,
        minibatch=bundle.config.steps_per_episode,
        total_episodes=args.episodes,
        seed=args.seed,
        lr=args.lr,
    )
    episodes_csv = CsvWriter(out / "episodes.csv", ["episode", "env_idx", "return", "length"])
    updates_csv = CsvWriter(out / "updates.csv", ["update", "loss", "clip_frac", "approx_kl", "entropy"])
    vec = make_vec(options, lambda: bundle.make_hooks(schema), args.envs, seed=args.seed,
                   timeout=args.timeout)
    try:
        params, log = train(
            vec, config,
            on_episode=lambda row: episodes_csv.row(*row),
            on_update=lambda row: updates_csv.row(*row),
        )
        save_checkpoint(out / "checkpoint.bin", params, scenario=scenario,
                        config=config.__dict__)
        returns = [row[2] for row in log.episodes]
        if returns:
            tail = returns[-10:]
            print(f"trained {len(returns)} episodes; final-10 mean return {sum(tail) / len(tail)!r}")
        else:
            print("trained 0 episodes; checkpoint holds the initial parameters")
        return 0
    finally:
        episodes_csv.close()
        updates_csv.close()
        vec.close()
        assert_no_orphans()


def cmd_evaluate(args) -> int:
    from .controllers.checkpoint import load_checkpoint
    from .controllers.train import greedy_action

    scenario = args.scenario
    out = make_out_dir(args, scenario)
    write_manifest(out, scenario, args, extra={"checkpoint": str(args.checkpoint)})
    params, header = load_checkpoint(args.checkpoint, expected_scenario=scenario)
    overrides = {}
    if args.duration is not None:
        overrides["end_time"] = args.duration
    bundle, options = materialize_case(scenario, out, args.config, overrides)
    cfg = bundle.config
    n_windows = cfg.end_time / cfg.window_size
    if abs(n_windows - round(n_windows)) > 1e-9 * max(1.0, n_windows):
        raise ConfigError(f"duration {cfg.end_time} is not a whole number of coupling windows")
    hooks = bundle.make_hooks()
    if params.obs_dim != hooks.observation_space.shape or params.act_dim != hooks.action_space.shape:
        raise ConfigError(
            f"checkpoint shapes (obs {params.obs_dim}, act {params.act_dim}) do not match "
            f"the scenario (obs {hooks.observation_space.shape}, act {hooks.action_space.shape})"
        )
    writer = CsvWriter(out / "timeseries.csv", ["t", "action", "cd", "cl", "reward"])
    env = EnvInstance(options, hooks, idx=0, timeout=args.timeout)
    try:
        cds = []
        space = hooks.action_space

        def on_step(step_idx, action, result, env):
            cylinder_timeseries(writer, env, True)(step_idx, action, result, env)
            cds.extend(b["forces/Forces"][0] for _, b in env.last_step_trace)

        steps, total = run_episode(
            env, lambda s, t, o: greedy_action(params, o, space), on_step
        )
        tail = cds[-max(1, len(cds) // 4):]
        tail_cd = sum(tail) / len(tail)
        change = 100.0 * (tail_cd - cfg.cd_base) / cfg.cd_base
        print(f"evaluated {steps} steps, return {total!r}")
        print(f"mean Cd over final 25%: {tail_cd!r} vs cd_base {cfg.cd_base!r} ({change:+.2f}%)")
        return 0
    finally:
        writer.close()
        env.close()
        assert_no_orphans()


def cmd_flap_demo(args) -> int:
    from .controllers.sine import SineController

    scenario = "perpendicular-flap"
    out = make_out_dir(args, scenario)
    write_manifest(out, scenario, args, extra={
        "amplitude": args.amplitude, "frequency": args.frequency, "duration": args.duration,
    })
    overrides = {"end_time": args.duration} if args.duration is not None else {}
    bundle, options = materialize_case(scenario, out, None, overrides)
    cfg = bundle.config
    sine = SineController(cfg.y0, args.amplitude, args.frequency)
    sine.check_bounds(cfg.action_low, cfg.action_high)

    for label, control in (("timeseries", sine), ("baseline", lambda t: cfg.y0)):
        writer = CsvWriter(out / f"{label}.csv", ["t", "y_c", "x_tip"])
        env = EnvInstance(options, bundle.make_hooks(), idx=0, timeout=args.timeout)
        try:
            steps, _ = run_episode(
                env, lambda s, t, o: [control(t)], flap_timeseries(writer, env)
            )
        finally:
            writer.close()
            env.close()
    print(f"flap demo: {steps} steps controlled + baseline written to {out}")
    assert_no_orphans()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowbridge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_choices=None):
        if scenario_choices is not None:
            p.add_argument("scenario", choices=scenario_choices)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory (default: runs/<name>-seed<seed>-<stamp>)")
        p.add_argument("--timeout", type=float, default=60.0, help=argparse.SUPPRESS)

    p = sub.add_parser("baseline", help="run one unactuated episode and export its time series")
    common(p, ALL_SCENARIOS)
    p.add_argument("--config", default=None, help="existing gymprecice-config.json to use as the case")
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("train", help="train the PPO controller")
    common(p, CYLINDER_SCENARIOS)
    p.add_argument("--config", default=None)
    p.add_argument("--envs", type=int, default=4)
    p.add_argument("--episodes", type=int, default=150)
    p.add_argument("--lr", type=float, default=3e-4)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="run a trained policy deterministically")
    common(p, CYLINDER_SCENARIOS)
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--duration", type=float, default=None, help="episode length in seconds")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("flap-demo", help="open-loop sinusoidal jet sweep on the flap scenario")
    common(p)
    p.add_argument("--amplitude", type=float, default=0.3)
    p.add_argument("--frequency", type=float, default=0.5)
    p.add_argument("--duration", type=float, default=10.0)
    p.set_defaults(handler=cmd_flap_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FlowbridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
