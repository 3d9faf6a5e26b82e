"""Channel-flow surrogate: maps an inlet jet position to a force on the flap.

The jet only loads the flap while it overlaps it; the handoff is the
quadratic bump

    F = c_f U_max^2 max(0, 1 - ((y_c - y_flap) / w_j)^2) (1 - beta x)

where y_c is the controller-prescribed jet center, x the flap tip
displacement fed back from the solid solver, and the remaining constants
come from ChannelParams.  The participant reads "JetCenter" from the
controller link and "Displacement" from the solid link, and writes "Force"
to the solid plus "TipDisplacement" (an echo of x) back to the controller.
Outputs for window k are the values known at the window's start; the first
window therefore carries F = 0 and x = 0.
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


@dataclass(frozen=True)
class ChannelParams:
    H: float = 1.0
    y_flap: float = 0.5
    w_j: float = 0.3
    U_max: float = 15.0
    c_f: float = 0.002
    beta: float = 0.1
    m: float = 1.0
    c: float = 1.6
    k: float = 4.0
    solver_dt: float = 0.002
    x0: float = 0.0
    dx0: float = 0.0

    def __post_init__(self):
        for name in ("H", "w_j", "U_max", "c_f", "m", "k", "solver_dt"):
            if getattr(self, name) <= 0:
                raise SchemaError(f"channel parameter {name!r} must be positive")
        for name in ("c", "beta"):
            if getattr(self, name) < 0:
                raise SchemaError(f"channel parameter {name!r} must be nonnegative")
        if not 0.0 <= self.y_flap <= self.H:
            raise SchemaError("y_flap must lie inside the channel [0, H]")

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelParams":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown channel parameter(s): {', '.join(sorted(unknown))}")
        return cls(**doc)


def jet_force(y_c: float, x: float, p: ChannelParams) -> float:
    xi = (y_c - p.y_flap) / p.w_j
    overlap = max(0.0, 1.0 - xi * xi)
    return p.c_f * p.U_max * p.U_max * overlap * (1.0 - p.beta * x)


def load_channel_params(path: str | None) -> ChannelParams:
    if path is None:
        return ChannelParams()
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    # scenario params files nest the solver block under "channel"
    return ChannelParams.from_dict(doc["channel"] if "channel" in doc else doc)


def infer_participant(schema: CouplingSchema) -> str:
    for spec in schema.fields.values():
        if spec.name == "JetCenter":
            return schema.meshes[spec.mesh].owner
    raise SchemaError("schema has no JetCenter field; not a channel-flap setup")


def run_channel_participant(
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

    try:
        session.write_field("TipDisplacement", [0.0])
        session.write_field("Force", [0.0])
        while session.is_coupling_ongoing():
            session.advance(window)
            y_c = session.read_field("JetCenter")[0]
            x = session.read_field("Displacement")[0]
            if not (math.isfinite(y_c) and math.isfinite(x)):
                raise DivergenceError(f"non-finite coupling data (y_c={y_c!r}, x={x!r})")
            session.write_field("Force", [jet_force(y_c, x, p)])
            session.write_field("TipDisplacement", [x])
        session.finalize()
    except PeerFinalized:
        session.finalize()
    except DivergenceError:
        session.abort(f"channel solver diverged at t={session.t}")
        raise


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowbridge-channel", description=__doc__.splitlines()[0])
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
        run_channel_participant(links, schema, params, me)
        return 0
    except (CouplingError, SchemaError, DivergenceError, OSError, json.JSONDecodeError) as exc:
        print(f"channel solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
