"""Cylinder drag-attenuation scenarios: paired synthetic jets or a rotating
surface actuator, driven against the wake-oscillator solver.

The jet actuator maps a signed flow rate to parabolic normal-velocity
profiles on two pole-mounted arc meshes.  jet1 carries the commanded rate,
jet2 its negation, so the pair never injects net mass.  The per-vertex
profile is rescaled by one common factor so the *discrete* flux (profile
dotted with the mesh normals and face weights) equals the clamped rate
exactly; the solver's flux quadrature then recovers the same number to
round-off.

The rotating actuator prescribes the rigid-rotation velocity field
omega x r on the cylinder surface mesh, clamped to +-omega_max.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from ..adapter import BoxSpace, EnvHooks
from ..errors import ConfigError, EnvError
from ..schema import CouplingSchema, load_schema
from ..solvers.wake import WakeParams, clamp
from .meshes import arc_mesh, circle_mesh, probe_fan

SOLVER_NAME = "fluid-wake"
JET_VERTICES = 11
CYLINDER_VERTICES = 24

# Calibrated on the unactuated default episode; kept in sync by a test.
JET_CD_BASE = 3.248026349932747
ROT_CD_BASE = 3.248026349932747


@dataclass(frozen=True)
class CylinderConfig:
    mode: str = "jet"  # "jet" or "rotation"
    wake: WakeParams = field(default_factory=WakeParams)
    window_size: float = 0.002
    end_time: float = 2.0
    substeps_per_action: int = 50
    n_probes: int = 11
    probe_inner_factor: float = 1.0
    probe_outer_factor: float = 2.0
    probe_half_angle_deg: float = 60.0
    jet_half_angle_deg: float = 5.0
    jet_vertices: int = JET_VERTICES
    cylinder_vertices: int = CYLINDER_VERTICES
    lift_penalty: float = 0.2
    cd_base: float = JET_CD_BASE

    @property
    def action_limit(self) -> float:
        # the wake solver normalizes by the same reference, so the policy's
        # clamp and the solver's clamp coincide
        return self.wake.q_max_ref

    @property
    def steps_per_episode(self) -> int:
        return round(self.end_time / (self.window_size * self.substeps_per_action))


def default_jet_config() -> CylinderConfig:
    return CylinderConfig(mode="jet", cd_base=JET_CD_BASE)


def default_rotating_config() -> CylinderConfig:
    wake = WakeParams(actuation_mode="rotation", q_max_ref=5.0)
    return CylinderConfig(mode="rotation", wake=wake, cd_base=ROT_CD_BASE)


def build_jet_meshes(center, radius, half_angle_deg, n):
    """Mirror pair of pole arcs: (top vertices, bottom vertices, weights)."""
    top, weights = arc_mesh(center, radius, 90.0, half_angle_deg, n)
    bottom, _ = arc_mesh(center, radius, -90.0, half_angle_deg, n)
    return top, bottom, weights


def build_schema_doc(cfg: CylinderConfig) -> dict:
    center = cfg.wake.cylinder_center
    radius = cfg.wake.cylinder_diameter / 2.0
    meshes = []
    fields = []
    if cfg.mode == "jet":
        top, bottom, weights = build_jet_meshes(center, radius, cfg.jet_half_angle_deg, cfg.jet_vertices)
        for name, verts in (("jet1", top), ("jet2", bottom)):
            meshes.append(
                {"name": name, "dim": 2, "owner": SOLVER_NAME,
                 "vertices": [list(v) for v in verts], "face_weights": list(weights)}
            )
            fields.append({"name": "Velocity", "mesh": name, "components": 2, "writer": "controller"})
    elif cfg.mode == "rotation":
        verts, weights = circle_mesh(center, radius, cfg.cylinder_vertices)
        meshes.append(
            {"name": "cylinder", "dim": 2, "owner": SOLVER_NAME,
             "vertices": [list(v) for v in verts], "face_weights": list(weights)}
        )
        fields.append({"name": "Velocity", "mesh": "cylinder", "components": 2, "writer": "controller"})
    else:
        raise ConfigError(f"unknown cylinder mode {cfg.mode!r}")

    probes = probe_fan(center, cfg.probe_inner_factor * cfg.wake.cylinder_diameter,
                       cfg.probe_outer_factor * cfg.wake.cylinder_diameter,
                       cfg.probe_half_angle_deg, cfg.n_probes)
    meshes.append(
        {"name": "probes", "dim": 2, "owner": "controller",
         "vertices": [list(v) for v in probes], "face_weights": [1.0] * len(probes)}
    )
    meshes.append(
        {"name": "forces", "dim": 2, "owner": "controller",
         "vertices": [list(center)], "face_weights": [1.0]}
    )
    fields.append({"name": "Probes", "mesh": "probes", "components": 1, "writer": SOLVER_NAME})
    fields.append({"name": "Forces", "mesh": "forces", "components": 2, "writer": SOLVER_NAME})

    return {
        "participants": ["controller", SOLVER_NAME],
        "links": [["controller", SOLVER_NAME]],
        "meshes": meshes,
        "fields": fields,
        "window_size": cfg.window_size,
        "end_time": cfg.end_time,
    }


def build_schema(cfg: CylinderConfig) -> CouplingSchema:
    return load_schema(json.dumps(build_schema_doc(cfg)))


def params_doc(cfg: CylinderConfig) -> dict:
    """One JSON document, consumed both by the solver (its "wake" object is
    passed to --params) and by the environment hooks ("control")."""
    wake = {
        "mu": cfg.wake.mu, "omega0": cfg.wake.omega0, "g": cfg.wake.g,
        "cd0": cfg.wake.cd0, "kappa_d": cfg.wake.kappa_d, "kappa_l": cfg.wake.kappa_l,
        "solver_dt": cfg.wake.solver_dt, "actuation_mode": cfg.wake.actuation_mode,
        "q_max_ref": cfg.wake.q_max_ref, "q0": cfg.wake.q0, "dq0": cfg.wake.dq0,
        "cylinder_center": list(cfg.wake.cylinder_center),
        "cylinder_diameter": cfg.wake.cylinder_diameter,
    }
    control = {
        "mode": cfg.mode,
        "window_size": cfg.window_size,
        "end_time": cfg.end_time,
        "substeps_per_action": cfg.substeps_per_action,
        "n_probes": cfg.n_probes,
        "probe_inner_factor": cfg.probe_inner_factor,
        "probe_outer_factor": cfg.probe_outer_factor,
        "probe_half_angle_deg": cfg.probe_half_angle_deg,
        "jet_half_angle_deg": cfg.jet_half_angle_deg,
        "jet_vertices": cfg.jet_vertices,
        "cylinder_vertices": cfg.cylinder_vertices,
        "lift_penalty": cfg.lift_penalty,
        "cd_base": cfg.cd_base,
    }
    return {"wake": wake, "control": control}


def config_from_params_doc(doc: dict) -> CylinderConfig:
    wake = WakeParams.from_dict(doc["wake"])
    control = dict(doc["control"])
    mode = control.pop("mode")
    return CylinderConfig(mode=mode, wake=wake, **control)


# -- actuation maps ----------------------------------------------------------


def jet_get_action(rate: float, jet_meshes, center, q_max: float) -> dict[str, list[float]]:
    """Parabolic zero-net jet velocities for a signed flow rate.

    jet_meshes is the (jet1, jet2) pair of CouplingMesh objects; the
    returned buffers are keyed by qualified field id.  The commanded rate
    is clamped to +-q_max, then the per-vertex parabola is rescaled so the
    discrete flux equals the clamped rate exactly.
    """
    rate = clamp(float(rate), -q_max, q_max)
    out: dict[str, list[float]] = {}
    for mesh, signed in zip(jet_meshes, (rate, -rate)):
        profile = []
        n = mesh.vertex_count
        for i in range(n):
            xi = -1.0 + (2 * i + 1) / n
            profile.append(1.0 - xi * xi)
        scale_base = sum(p * w for p, w in zip(profile, mesh.face_weights))
        if scale_base <= 0.0:
            raise EnvError(f"jet mesh {mesh.name!r} has degenerate face weights")
        scale = signed / scale_base
        buf = []
        for (x, y), p in zip(mesh.vertices, profile):
            dx, dy = x - center[0], y - center[1]
            r = math.hypot(dx, dy)
            v = p * scale
            buf.extend((v * dx / r, v * dy / r))
        out[f"{mesh.name}/Velocity"] = buf
    return out


def discrete_flux(buffer, mesh, center) -> float:
    """Normal flux of a velocity buffer through a mesh (same quadrature as
    the solver's net_actuation)."""
    total = 0.0
    for i, (x, y) in enumerate(mesh.vertices):
        dx, dy = x - center[0], y - center[1]
        r = math.hypot(dx, dy)
        total += (buffer[2 * i] * dx / r + buffer[2 * i + 1] * dy / r) * mesh.face_weights[i]
    return total


def rot_get_action(omega: float, mesh, center, omega_max: float) -> dict[str, list[float]]:
    """Rigid-rotation surface velocities, omega clamped to +-omega_max."""
    omega = clamp(float(omega), -omega_max, omega_max)
    buf = []
    for x, y in mesh.vertices:
        dx, dy = x - center[0], y - center[1]
        if dx == 0.0 and dy == 0.0:
            raise EnvError(f"mesh {mesh.name!r} has a vertex at the rotation center")
        buf.extend((-omega * dy, omega * dx))
    return {f"{mesh.name}/Velocity": buf}


def mean_forces(window_trace) -> tuple[float, float]:
    if not window_trace:
        raise EnvError("no force samples recorded for this step")
    cd = cl = 0.0
    for _, buffers in window_trace:
        fx = buffers["forces/Forces"]
        cd += fx[0]
        cl += fx[1]
    n = len(window_trace)
    return cd / n, cl / n


def cylinder_reward(window_trace, cd_base: float, lift_penalty: float) -> float:
    mean_cd, mean_cl = mean_forces(window_trace)
    return (cd_base - mean_cd) - lift_penalty * abs(mean_cl)


class CylinderHooks(EnvHooks):
    """Hook set shared by the jet and rotating actuators."""

    def __init__(self, cfg: CylinderConfig, schema: CouplingSchema):
        self.cfg = cfg
        self.schema = schema
        self.substeps_per_action = cfg.substeps_per_action
        self.action_space = BoxSpace.symmetric(cfg.action_limit, 1)
        self.observation_space = BoxSpace.symmetric(math.inf, cfg.n_probes)
        if cfg.mode == "jet":
            self._jets = (schema.meshes["jet1"], schema.meshes["jet2"])
        else:
            self._cyl = schema.meshes["cylinder"]

    def get_action(self, action, write_specs):
        if self.cfg.mode == "jet":
            return jet_get_action(action[0], self._jets, self.cfg.wake.cylinder_center, self.cfg.action_limit)
        return rot_get_action(action[0], self._cyl, self.cfg.wake.cylinder_center, self.cfg.action_limit)

    def get_observation(self, read_buffers, read_specs, t):
        probes = read_buffers["probes/Probes"]
        if len(probes) != self.cfg.n_probes:
            raise EnvError(f"probe buffer has {len(probes)} entries, expected {self.cfg.n_probes}")
        return list(probes)

    def get_reward(self, window_trace, t):
        return cylinder_reward(window_trace, self.cfg.cd_base, self.cfg.lift_penalty)


def _scenario(cfg: CylinderConfig, name: str):
    from .assets import ScenarioBundle

    return ScenarioBundle(
        name=name,
        config=cfg,
        schema_builder=lambda: build_schema(cfg),
        hooks_factory=lambda schema: CylinderHooks(cfg, schema),
        params_builder=lambda: params_doc(cfg),
        solvers={SOLVER_NAME: "flowbridge.solvers.wake"},
    )


def jet_scenario():
    return _scenario(default_jet_config(), "jet-cylinder")


def rotating_scenario():
    return _scenario(default_rotating_config(), "rotating-cylinder")


def with_overrides(cfg: CylinderConfig, **kwargs) -> CylinderConfig:
    return replace(cfg, **kwargs)
