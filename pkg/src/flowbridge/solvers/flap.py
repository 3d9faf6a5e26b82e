"""Elastic-flap surrogate: the flap's first bending mode as a damped oscillator.

    m x'' + c x' + k x = F(t)

integrated with RK4 at solver_dt.  F arrives once per coupling window from
the channel solver and is interpolated linearly across the window from the
previous window's value, mirroring how the wake solver treats actuation.
The participant reads "Force" and writes "Displacement" (the tip value at
the window's start).  |x| > 1 m trips the divergence guard.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from ..errors import CouplingError, DivergenceError, PeerFinalized, SchemaError
from ..net import Connection, endpoint_from_env, parse_endpoint
from ..schema import CouplingSchema, load_schema_file
from ..session import CouplingSession, establish_links
from .channel import ChannelParams, load_channel_params
from .wake import substeps_per_window

X_GUARD = 1.0


def flap_rhs(x: float, dx: float, force: float, p: ChannelParams) -> tuple[float, float]:
    return dx, (force - p.c * dx - p.k * x) / p.m


def rk4_step(x, dx, f_start, f_end, dt, p: ChannelParams):
    f_mid = 0.5 * (f_start + f_end)
    k1x, k1d = flap_rhs(x, dx, f_start, p)
    k2x, k2d = flap_rhs(x + 0.5 * dt * k1x, dx + 0.5 * dt * k1d, f_mid, p)
    k3x, k3d = flap_rhs(x + 0.5 * dt * k2x, dx + 0.5 * dt * k2d, f_mid, p)
    k4x, k4d = flap_rhs(x + dt * k3x, dx + dt * k3d, f_end, p)
    return (
        x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        dx + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d),
    )


def integrate_window(x, dx, f_start, f_end, window, p: ChannelParams, n_sub=None):
    n = substeps_per_window(window, p.solver_dt) if n_sub is None else n_sub
    h = window / n
    df = f_end - f_start
    for i in range(n):
        fa = f_start + df * (i / n)
        fb = f_start + df * ((i + 1) / n)
        x, dx = rk4_step(x, dx, fa, fb, h, p)
        if not (math.isfinite(x) and math.isfinite(dx)) or abs(x) > X_GUARD:
            raise DivergenceError(f"flap displacement diverged (x={x!r}, dx={dx!r})")
    return x, dx


def infer_participant(schema: CouplingSchema) -> str:
    for spec in schema.fields.values():
        if spec.name == "Force":
            return schema.meshes[spec.mesh].owner
    raise SchemaError("schema has no Force field; not a channel-flap setup")


def run_flap_participant(
    links: dict[str, Connection],
    schema: CouplingSchema,
    p: ChannelParams,
    participant: str | None = None,
    timeout: float = 30.0,
) -> None:
    me = participant or infer_participant(schema)
    session = CouplingSession(schema, me, links, timeout=timeout)
    for link in schema.links_of(me):
        for mesh in schema.meshes_on_link(link):
            session.set_mesh_vertices(mesh.name, mesh.vertices)
    window = session.initialize()
    n_sub = substeps_per_window(window, p.solver_dt)

    x, dx = p.x0, p.dx0
    f_prev = 0.0
    try:
        session.write_field("Displacement", [x])
        while session.is_coupling_ongoing():
            session.advance(window)
            f_new = session.read_field("Force")[0]
            if not math.isfinite(f_new):
                raise DivergenceError(f"non-finite force received ({f_new!r})")
            x, dx = integrate_window(x, dx, f_prev, f_new, window, p, n_sub)
            session.write_field("Displacement", [x])
            f_prev = f_new
        session.finalize()
    except PeerFinalized:
        session.finalize()
    except DivergenceError:
        session.abort(f"flap solver diverged at t={session.t}")
        raise


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowbridge-flap", description=__doc__.splitlines()[0])
    parser.add_argument("--endpoint", help="base endpoint; defaults to FLOWBRIDGE_ENDPOINT")
    parser.add_argument("--schema", required=True)
    parser.add_argument("--params")
    parser.add_argument("--participant")
    args = parser.parse_args(argv)
    try:
        schema = load_schema_file(args.schema)
        params = load_channel_params(args.params)
        base = parse_endpoint(args.endpoint) if args.endpoint else endpoint_from_env()
        me = args.participant or infer_participant(schema)
        links = establish_links(schema, me, base)
        run_flap_participant(links, schema, params, me)
        return 0
    except (CouplingError, SchemaError, DivergenceError, OSError, json.JSONDecodeError) as exc:
        print(f"flap solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
