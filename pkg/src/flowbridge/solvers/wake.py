"""Wake-oscillator surrogate for the actuated cylinder flow.

The vortex street is reduced to a Van der Pol oscillator in the wake
amplitude q(t):

    q''  =  mu (1 - q^2) q'  -  omega0^2 q  +  g u

with u in [-1, 1] the normalized actuation.  Drag and lift coefficients
and the probe signals are algebraic readouts of (q, q'):

    Cd = cd0 + kappa_d q^2         Cl = kappa_l q
    p_i = q exp(-d_i / D) + q' exp(-2 d_i / D)

where d_i is the probe's distance from the cylinder center and D the
cylinder diameter.

Coupling contract (fixed by the scenario schemas): the solver consumes a
"Velocity" field on mesh "jet1"/"jet2" (jet mode) or "cylinder" (rotation
mode) and produces "Forces" ([Cd, Cl] on a one-vertex mesh) and "Probes"
(one scalar per probe vertex).  Outputs are written before each advance,
so the value exchanged for window k is the state at the window's start.
Actuation is interpolated linearly across each window from the previous
window's end value, keeping the applied signal continuous.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass

from ..errors import CouplingError, DivergenceError, PeerFinalized, SchemaError
from ..net import Connection, endpoint_from_env, parse_endpoint
from ..schema import CouplingSchema, load_schema_file
from ..session import CouplingSession, establish_links

Q_GUARD = 10.0
REL_DT_TOL = 1e-9


@dataclass(frozen=True)
class WakeParams:
    mu: float = 1.0
    omega0: float = 2.0 * math.pi
    g: float = 10.0
    cd0: float = 3.2
    kappa_d: float = 0.05
    kappa_l: float = 0.3
    solver_dt: float = 0.002
    actuation_mode: str = "jet"
    q_max_ref: float = 2.5e-4
    q0: float = 1.0
    dq0: float = 0.0
    cylinder_center: tuple[float, float] = (0.2, 0.2)
    cylinder_diameter: float = 0.1

    def __post_init__(self):
        for name in ("mu", "omega0", "g", "cd0", "kappa_d", "solver_dt", "q_max_ref", "cylinder_diameter"):
            if getattr(self, name) <= 0:
                raise SchemaError(f"wake parameter {name!r} must be positive")
        if self.actuation_mode not in ("jet", "rotation"):
            raise SchemaError(f"unknown actuation_mode {self.actuation_mode!r}")
        if abs(self.q0) > Q_GUARD:
            raise SchemaError(f"initial amplitude q0 exceeds the divergence guard {Q_GUARD}")

    @classmethod
    def from_dict(cls, doc: dict) -> "WakeParams":
        kwargs = dict(doc)
        if "cylinder_center" in kwargs:
            kwargs["cylinder_center"] = tuple(float(x) for x in kwargs["cylinder_center"])
        known = set(cls.__dataclass_fields__)
        unknown = set(kwargs) - known
        if unknown:
            raise SchemaError(f"unknown wake parameter(s): {', '.join(sorted(unknown))}")
        return cls(**kwargs)


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def vdp_rhs(q: float, dq: float, u: float, p: WakeParams) -> tuple[float, float]:
    """Time derivative of (q, dq); linear in the actuation u."""
    return dq, p.mu * (1.0 - q * q) * dq - p.omega0 * p.omega0 * q + p.g * u


def rk4_step(q: float, dq: float, u_start: float, u_end: float, dt: float, p: WakeParams):
    """Classic RK4 over one substep, u interpolated linearly across it."""
    u_mid = 0.5 * (u_start + u_end)
    k1q, k1d = vdp_rhs(q, dq, u_start, p)
    k2q, k2d = vdp_rhs(q + 0.5 * dt * k1q, dq + 0.5 * dt * k1d, u_mid, p)
    k3q, k3d = vdp_rhs(q + 0.5 * dt * k2q, dq + 0.5 * dt * k2d, u_mid, p)
    k4q, k4d = vdp_rhs(q + dt * k3q, dq + dt * k3d, u_end, p)
    return (
        q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
        dq + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d),
    )


def substeps_per_window(window: float, solver_dt: float) -> int:
    n = round(window / solver_dt)
    if n < 1 or abs(window / solver_dt - n) > REL_DT_TOL * max(1.0, n):
        raise SchemaError(f"solver_dt {solver_dt} does not divide the coupling window {window}")
    return n


def integrate_window(q, dq, u_start, u_end, window, p: WakeParams, n_sub=None):
    """Advance one coupling window with the actuation ramping u_start -> u_end."""
    n = substeps_per_window(window, p.solver_dt) if n_sub is None else n_sub
    h = window / n
    du = u_end - u_start
    for i in range(n):
        ua = u_start + du * (i / n)
        ub = u_start + du * ((i + 1) / n)
        q, dq = rk4_step(q, dq, ua, ub, h, p)
        if not (math.isfinite(q) and math.isfinite(dq)) or abs(q) > Q_GUARD:
            raise DivergenceError(f"wake amplitude diverged (q={q!r}, dq={dq!r})")
    return q, dq


def forces(q: float, p: WakeParams) -> tuple[float, float]:
    return p.cd0 + p.kappa_d * q * q, p.kappa_l * q


def probe_signals(q, dq, probe_coords, center, diameter) -> list[float]:
    out = []
    for x, y in probe_coords:
        d = math.hypot(x - center[0], y - center[1])
        out.append(q * math.exp(-d / diameter) + dq * math.exp(-2.0 * d / diameter))
    return out


def surface_normals(coords, center) -> list[tuple[float, float]]:
    normals = []
    for x, y in coords:
        dx, dy = x - center[0], y - center[1]
        r = math.hypot(dx, dy)
        if r == 0.0:
            raise SchemaError("mesh vertex coincides with the cylinder center")
        normals.append((dx / r, dy / r))
    return normals


def net_actuation(read_fields: dict[str, list[float]], schema: CouplingSchema, p: WakeParams) -> float:
    """Normalized actuation u in [-1, 1] recovered from the velocity buffers.

    Jet mode integrates the normal flux over the jet1 mesh with the mesh's
    face weights; rotation mode averages tangential-speed / radius over
    the cylinder surface.  The pairing jet2 carries the opposite flux by
    construction and does not enter the net measure.
    """
    mesh_name = "jet1" if p.actuation_mode == "jet" else "cylinder"
    key = f"{mesh_name}/Velocity"
    if key not in read_fields:
        raise SchemaError(f"actuation field {key!r} missing")
    values = read_fields[key]
    if not all(math.isfinite(v) for v in values):
        raise DivergenceError(f"non-finite actuation received on {key!r}")
    mesh = schema.meshes[mesh_name]
    if p.actuation_mode == "jet":
        normals = surface_normals(mesh.vertices, p.cylinder_center)
        flux = 0.0
        for i, (nx, ny) in enumerate(normals):
            vx, vy = values[2 * i], values[2 * i + 1]
            flux += (vx * nx + vy * ny) * mesh.face_weights[i]
        return clamp(flux / p.q_max_ref, -1.0, 1.0)
    total = 0.0
    for i, (x, y) in enumerate(mesh.vertices):
        dx, dy = x - p.cylinder_center[0], y - p.cylinder_center[1]
        r = math.hypot(dx, dy)
        if r == 0.0:
            raise SchemaError("mesh vertex coincides with the cylinder center")
        vx, vy = values[2 * i], values[2 * i + 1]
        tangential = (vx * (-dy) + vy * dx) / r
        total += tangential / r
    omega = total / mesh.vertex_count
    return clamp(omega / p.q_max_ref, -1.0, 1.0)


def infer_participant(schema: CouplingSchema, p: WakeParams) -> str:
    mesh_name = "jet1" if p.actuation_mode == "jet" else "cylinder"
    if mesh_name not in schema.meshes:
        raise SchemaError(f"schema has no actuation mesh {mesh_name!r}")
    return schema.meshes[mesh_name].owner


def run_wake_participant(
    links: dict[str, Connection],
    schema: CouplingSchema,
    p: WakeParams,
    participant: str | None = None,
    timeout: float = 30.0,
) -> None:
    """Participate in one coupled run over already-open connections.

    Raises PeerFinalized only internally; returns normally both on natural
    episode end and on an early peer FINALIZE.
    """
    me = participant or infer_participant(schema, p)
    session = CouplingSession(schema, me, links, timeout=timeout)
    for link in schema.links_of(me):
        for mesh in schema.meshes_on_link(link):
            session.set_mesh_vertices(mesh.name, mesh.vertices)
    window = session.initialize()
    n_sub = substeps_per_window(window, p.solver_dt)

    probe_coords = schema.meshes["probes"].vertices
    read_keys = [f.qualified for f in schema.fields.values() if schema.reader_of(f) == me]
    q, dq = p.q0, p.dq0
    u_prev = 0.0

    def write_outputs():
        cd, cl = forces(q, p)
        session.write_field("Forces", [cd, cl])
        session.write_field("Probes", probe_signals(q, dq, probe_coords, p.cylinder_center, p.cylinder_diameter))

    try:
        write_outputs()
        while session.is_coupling_ongoing():
            session.advance(window)
            buffers = {key: session.read_field(key) for key in read_keys}
            u_new = net_actuation(buffers, schema, p)
            q, dq = integrate_window(q, dq, u_prev, u_new, window, p, n_sub)
            write_outputs()
            u_prev = u_new
        session.finalize()
    except PeerFinalized:
        session.finalize()
    except DivergenceError:
        session.abort(f"wake solver diverged at t={session.t}")
        raise


def _load_params(path: str | None) -> WakeParams:
    if path is None:
        return WakeParams()
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    # scenario params files nest the solver block under "wake"
    return WakeParams.from_dict(doc["wake"] if "wake" in doc else doc)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowbridge-wake", description=__doc__.splitlines()[0])
    parser.add_argument("--endpoint", help="base endpoint; defaults to FLOWBRIDGE_ENDPOINT")
    parser.add_argument("--schema", required=True, help="coupling schema JSON")
    parser.add_argument("--params", help="solver parameter JSON")
    parser.add_argument("--participant", help="participant name; inferred from the schema if omitted")
    args = parser.parse_args(argv)
    try:
        schema = load_schema_file(args.schema)
        params = _load_params(args.params)
        base = parse_endpoint(args.endpoint) if args.endpoint else endpoint_from_env()
        me = args.participant or infer_participant(schema, params)
        links = establish_links(schema, me, base)
        run_wake_participant(links, schema, params, me)
        return 0
    except (CouplingError, SchemaError, DivergenceError, OSError, json.JSONDecodeError) as exc:
        print(f"wake solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
