"""Episode-oriented environment over a coupled run.

An EnvInstance owns one controller-side CouplingSession per episode plus
the solver processes behind it.  ``reset`` relaunches the solvers and
returns the initial observation (read buffers start zero-filled), ``step``
applies one control action smoothly over K coupling windows, and ``close``
releases everything.  Problem specifics stay in an EnvHooks object with
four overridable operations, mirroring how scenario environments subclass
an abstract adapter in Gym-style frameworks.

Options arrive as the gymprecice-config-style JSON document::

    {
        "environment": {"name": ...},
        "physics_simulation_engine": {"solvers": [...], "reset_script": ..., "run_script": ...},
        "controller": {"read_from": {field: mesh}, "write_to": {mesh: field}},
        "schema_path": ...,      # optional, default "schema.json"
        "instance_root": ...     # optional, default "runs"
    }

Unknown keys anywhere in the document are rejected, not ignored.  The
controller participant is named "controller" in every schema this adapter
drives.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, EnvError, FlowbridgeError, StateError
from .launch import SubprocessLauncher
from .schema import CouplingSchema, FieldSpec, load_schema_file
from .session import CouplingSession

CONTROLLER = "controller"


@dataclass(frozen=True)
class BoxSpace:
    low: tuple[float, ...]
    high: tuple[float, ...]
    shape: int

    def __post_init__(self):
        if self.shape <= 0 or len(self.low) != self.shape or len(self.high) != self.shape:
            raise ConfigError("space bounds must match the declared shape")
        if any(l > h for l, h in zip(self.low, self.high)):
            raise ConfigError("space lower bound exceeds upper bound")

    @classmethod
    def symmetric(cls, limit: float, shape: int = 1) -> "BoxSpace":
        return cls((-limit,) * shape, (limit,) * shape, shape)

    def clamp(self, values) -> list[float]:
        return [min(max(v, l), h) for v, l, h in zip(values, self.low, self.high)]


@dataclass
class StepResult:
    observation: list[float]
    reward: float
    terminated: bool
    truncated: bool = False
    info: dict = field(default_factory=dict)


class EnvHooks:
    """Problem-specific bridge between actions/observations and fields.

    Hooks may keep private per-episode state but never touch the transport;
    the adapter is the only owner of the session.
    """

    action_space: BoxSpace
    observation_space: BoxSpace
    substeps_per_action: int = 1

    def get_action(self, action, write_specs: list[FieldSpec]) -> dict[str, list[float]]:
        """Map one (sub-)action to a buffer for every field in write_specs."""
        raise NotImplementedError

    def get_observation(self, read_buffers: dict[str, list[float]], read_specs: list[FieldSpec], t: float) -> list[float]:
        raise NotImplementedError

    def get_reward(self, window_trace: list[tuple[float, dict[str, list[float]]]], t: float) -> float:
        raise NotImplementedError

    def close_external_resources(self) -> None:
        pass

    def on_reset(self, seed: int | None) -> None:
        pass


@dataclass(frozen=True)
class EnvOptions:
    environment_name: str
    solvers: tuple[str, ...]
    reset_script: str
    run_script: str
    read_from: dict[str, str]  # field name -> mesh
    write_to: dict[str, str]  # mesh -> field name
    schema_path: str = "schema.json"
    instance_root: str = "runs"
    base_dir: Path = Path(".")


def _pop_section(doc: dict, key: str, where: str) -> dict:
    if key not in doc:
        raise ConfigError(f"{where}: missing key {key!r}")
    section = doc.pop(key)
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: key {key!r} must be an object")
    return dict(section)


def _take(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}: missing key {key!r}")
    return section.pop(key)


def _reject_unknown(section: dict, where: str) -> None:
    if section:
        raise ConfigError(f"{where}: unknown key(s): {', '.join(sorted(section))}")


def parse_options(text: str) -> EnvOptions:
    """Parse the environment configuration document; unknown keys fail loud."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"options document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("options document must be a JSON object")
    doc = dict(doc)

    env = _pop_section(doc, "environment", "options")
    name = _take(env, "name", "environment")
    _reject_unknown(env, "environment")
    if not isinstance(name, str) or not name:
        raise ConfigError("environment: name must be a non-empty string")

    engine = _pop_section(doc, "physics_simulation_engine", "options")
    solvers = _take(engine, "solvers", "physics_simulation_engine")
    reset_script = _take(engine, "reset_script", "physics_simulation_engine")
    run_script = _take(engine, "run_script", "physics_simulation_engine")
    _reject_unknown(engine, "physics_simulation_engine")
    if not isinstance(solvers, list) or not solvers or not all(isinstance(s, str) for s in solvers):
        raise ConfigError("physics_simulation_engine: solvers must be a non-empty list of names")

    controller = _pop_section(doc, "controller", "options")
    read_from = _take(controller, "read_from", "controller")
    write_to = _take(controller, "write_to", "controller")
    _reject_unknown(controller, "controller")
    if not isinstance(read_from, dict) or not isinstance(write_to, dict):
        raise ConfigError("controller: read_from and write_to must be objects")
    if not write_to:
        raise ConfigError("controller: write_to is empty; a controller must actuate something")

    schema_path = doc.pop("schema_path", "schema.json")
    instance_root = doc.pop("instance_root", "runs")
    _reject_unknown(doc, "options")

    return EnvOptions(
        environment_name=name,
        solvers=tuple(solvers),
        reset_script=str(reset_script),
        run_script=str(run_script),
        read_from=dict(read_from),
        write_to=dict(write_to),
        schema_path=str(schema_path),
        instance_root=str(instance_root),
    )


def load_options(path) -> EnvOptions:
    path = Path(path)
    options = parse_options(path.read_text(encoding="utf-8"))
    return EnvOptions(**{**options.__dict__, "base_dir": path.parent})


class EnvPhase(enum.Enum):
    IDLE = "idle"
    EPISODE = "episode"
    CLOSED = "closed"


class EnvInstance:
    """One environment: a controller session plus its solver participants."""

    def __init__(
        self,
        options: EnvOptions,
        hooks: EnvHooks,
        idx: int = 0,
        launcher=None,
        timeout: float = 30.0,
        endpoint_base: str | None = None,
    ):
        self.options = options
        self.hooks = hooks
        self.idx = idx
        self.timeout = timeout
        self.phase = EnvPhase.IDLE
        self.episode_counter = 0
        self.seed: int | None = None
        self.session: CouplingSession | None = None
        self.last_step_trace: list[tuple[float, dict[str, list[float]]]] = []
        self.last_substep_actions: list[list[float]] = []

        self.schema: CouplingSchema = load_schema_file(options.base_dir / options.schema_path)
        if CONTROLLER not in self.schema.participants:
            raise ConfigError("schema must declare a participant named 'controller'")

        self.write_specs: list[FieldSpec] = []
        for mesh, fname in options.write_to.items():
            spec = self.schema.resolve_field(fname, mesh)
            if spec.writer != CONTROLLER:
                raise ConfigError(f"write_to field {spec.qualified!r} is not written by the controller")
            self.write_specs.append(spec)
        self.read_specs: list[FieldSpec] = []
        for fname, mesh in options.read_from.items():
            spec = self.schema.resolve_field(fname, mesh)
            if self.schema.reader_of(spec) != CONTROLLER:
                raise ConfigError(f"read_from field {spec.qualified!r} is not read by the controller")
            self.read_specs.append(spec)

        if launcher is not None:
            self.launcher = launcher
        else:
            instance_dir = options.base_dir / options.instance_root / f"env_{idx}"
            self.launcher = SubprocessLauncher(
                schema=self.schema,
                solvers=list(options.solvers),
                template_dir=options.base_dir,
                instance_dir=instance_dir,
                reset_script=options.reset_script,
                run_script=options.run_script,
                endpoint_base=endpoint_base,
                timeout=timeout,
            )

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int | None = None) -> tuple[list[float], dict]:
        if self.phase is EnvPhase.CLOSED:
            raise StateError("environment is closed")
        self._teardown()
        if seed is not None:
            self.seed = seed
        self.episode_counter += 1
        self.hooks.on_reset(self.seed)

        try:
            conns = self.launcher.start_episode()
            session = CouplingSession(self.schema, CONTROLLER, conns, timeout=self.timeout)
            for link in self.schema.links_of(CONTROLLER):
                for mesh in self.schema.meshes_on_link(link):
                    session.set_mesh_vertices(mesh.name, mesh.vertices)
            session.initialize()
        except FlowbridgeError as exc:
            self._teardown()
            raise EnvError(f"reset failed: {exc}\n{self.launcher.failure_detail()}") from exc

        self.session = session
        self.phase = EnvPhase.EPISODE
        self._a_prev = [0.0] * self.hooks.action_space.shape
        observation = self._observe(t=0.0)
        return observation, {}

    def step(self, action) -> StepResult:
        if self.phase is not EnvPhase.EPISODE:
            raise StateError(f"step called while {self.phase.value}")
        a_new = [float(a) for a in action]
        if len(a_new) != self.hooks.action_space.shape:
            raise EnvError(f"action has length {len(a_new)}, expected {self.hooks.action_space.shape}")
        if not all(math.isfinite(a) for a in a_new):
            raise EnvError("action contains non-finite values")

        session = self.session
        k_sub = self.hooks.substeps_per_action
        trace: list[tuple[float, dict[str, list[float]]]] = []
        applied: list[list[float]] = []
        try:
            for k in range(1, k_sub + 1):
                frac = k / k_sub
                a_k = [p + frac * (n - p) for p, n in zip(self._a_prev, a_new)]
                buffers = self.hooks.get_action(a_k, self.write_specs)
                for spec in self.write_specs:
                    if spec.qualified not in buffers:
                        raise EnvError(f"get_action did not fill write field {spec.qualified!r}")
                    session.write_field(spec.qualified, buffers[spec.qualified])
                window_start = session.t
                session.advance(session.window_size)
                applied.append(a_k)
                trace.append((window_start, {s.qualified: session.read_field(s.qualified) for s in self.read_specs}))
                if not session.is_coupling_ongoing():
                    break
        except FlowbridgeError as exc:
            detail = self.launcher.failure_detail()
            self._teardown()
            raise EnvError(f"step failed mid-episode: {exc}\n{detail}") from exc

        self.last_step_trace = trace
        self.last_substep_actions = applied
        t_now = session.t
        reward = float(self.hooks.get_reward(trace, t_now))
        if not math.isfinite(reward):
            raise EnvError(f"get_reward returned a non-finite value ({reward!r})")
        observation = self._observe(t_now)
        terminated = not session.is_coupling_ongoing()
        if terminated:
            self._teardown()
        self._a_prev = a_new
        return StepResult(observation=observation, reward=reward, terminated=terminated)

    def close(self) -> None:
        if self.phase is EnvPhase.CLOSED:
            return
        self._teardown()
        self.launcher.close()
        self.hooks.close_external_resources()
        self.phase = EnvPhase.CLOSED

    # -- helpers -------------------------------------------------------------

    def _observe(self, t: float) -> list[float]:
        buffers = {s.qualified: self.session.read_field(s.qualified) for s in self.read_specs}
        observation = [float(v) for v in self.hooks.get_observation(buffers, self.read_specs, t)]
        if len(observation) != self.hooks.observation_space.shape:
            raise EnvError(
                f"get_observation returned length {len(observation)}, expected "
                f"{self.hooks.observation_space.shape}"
            )
        return observation

    def _teardown(self) -> None:
        if self.session is not None:
            try:
                self.session.finalize()
            except FlowbridgeError:
                pass
            self.session = None
        self.launcher.end_episode()
        self.phase = EnvPhase.IDLE
