"""Coupled-run schema: participants, links, meshes, fields, timing.

One JSON document per scenario is the single source of truth for both
sides of every link.  Top-level keys:

    participants   array of participant names
    links          array of [from, to] participant pairs
    meshes         array of {name, dim, owner, vertices, face_weights}
    fields         array of {name, mesh, components, writer}
    window_size    coupling window in seconds
    end_time       run duration in seconds

A mesh's ``owner`` is the participant that *consumes* field values defined
on it; a field therefore travels on the link joining its ``writer`` to the
owner of its mesh.  Field ids are qualified as ``"<mesh>/<name>"`` so the
same field name may appear on several meshes (two jets both carrying
"Velocity", for instance).

Both peers of a link exchange a SHA-256 digest of the canonical schema
serialization during the handshake, so runs configured from diverging
documents fail fast instead of mis-pairing buffers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

from .errors import SchemaError

REL_TIME_TOL = 1e-9


@dataclass(frozen=True)
class CouplingMesh:
    name: str
    dim: int
    owner: str
    vertices: tuple[tuple[float, ...], ...]
    face_weights: tuple[float, ...]

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    mesh: str
    components: int
    writer: str

    @property
    def qualified(self) -> str:
        return f"{self.mesh}/{self.name}"


@dataclass(frozen=True)
class LinkSpec:
    index: int
    a: str  # sends first within a window ("from" side)
    b: str  # receives first within a window ("to" side)

    def peer_of(self, participant: str) -> str:
        return self.b if participant == self.a else self.a


@dataclass(frozen=True)
class CouplingSchema:
    participants: tuple[str, ...]
    links: tuple[LinkSpec, ...]
    meshes: dict[str, CouplingMesh] = field(repr=False)
    fields: dict[str, FieldSpec] = field(repr=False)  # keyed by qualified id
    window_size: float = 0.0
    end_time: float = 0.0

    @property
    def window_count(self) -> int:
        return round(self.end_time / self.window_size)

    def links_of(self, participant: str) -> list[LinkSpec]:
        return [l for l in self.links if participant in (l.a, l.b)]

    def link_between(self, x: str, y: str) -> LinkSpec:
        for l in self.links:
            if {l.a, l.b} == {x, y}:
                return l
        raise SchemaError(f"no link between {x!r} and {y!r}")

    def field_link(self, spec: FieldSpec) -> LinkSpec:
        return self.link_between(spec.writer, self.meshes[spec.mesh].owner)

    def reader_of(self, spec: FieldSpec) -> str:
        return self.meshes[spec.mesh].owner

    def fields_on_link(self, link: LinkSpec) -> list[FieldSpec]:
        return [f for f in self.fields.values() if self.field_link(f) is link]

    def meshes_on_link(self, link: LinkSpec) -> list[CouplingMesh]:
        seen: dict[str, CouplingMesh] = {}
        for f in self.fields_on_link(link):
            seen.setdefault(f.mesh, self.meshes[f.mesh])
        return list(seen.values())

    def resolve_field(self, name: str, mesh: str | None = None) -> FieldSpec:
        """Accept a qualified "mesh/name" id or a bare name if unambiguous."""
        if mesh is not None:
            key = f"{mesh}/{name}"
            if key not in self.fields:
                raise SchemaError(f"unknown field {key!r}")
            return self.fields[key]
        if name in self.fields:
            return self.fields[name]
        hits = [f for f in self.fields.values() if f.name == name]
        if not hits:
            raise SchemaError(f"unknown field {name!r}")
        if len(hits) > 1:
            raise SchemaError(f"field name {name!r} is ambiguous; qualify as mesh/name")
        return hits[0]

    def canonical_json(self) -> str:
        doc = {
            "participants": list(self.participants),
            "links": [[l.a, l.b] for l in self.links],
            "meshes": [
                {
                    "name": m.name,
                    "dim": m.dim,
                    "owner": m.owner,
                    "vertices": [list(v) for v in m.vertices],
                    "face_weights": list(m.face_weights),
                }
                for m in self.meshes.values()
            ],
            "fields": [
                {"name": f.name, "mesh": f.mesh, "components": f.components, "writer": f.writer}
                for f in self.fields.values()
            ],
            "window_size": self.window_size,
            "end_time": self.end_time,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).digest()


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing key {key!r}")
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise SchemaError(f"{where}: key {key!r} must be {kind.__name__}")
    return value


def load_schema(text: str) -> CouplingSchema:
    """Parse and validate a schema document; raise SchemaError naming the
    first violated invariant."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a JSON object")

    participants = tuple(_require(doc, "participants", list, "schema"))
    if not participants or not all(isinstance(p, str) and p for p in participants):
        raise SchemaError("participants must be a non-empty list of names")
    if len(set(participants)) != len(participants):
        raise SchemaError("duplicate participant name")

    links = []
    for i, raw in enumerate(_require(doc, "links", list, "schema")):
        if not (isinstance(raw, list) and len(raw) == 2):
            raise SchemaError(f"link {i}: must be a [from, to] pair")
        a, b = raw
        for end in (a, b):
            if end not in participants:
                raise SchemaError(f"link {i}: endpoint {end!r} is not a declared participant")
        if a == b:
            raise SchemaError(f"link {i}: endpoints must differ")
        links.append(LinkSpec(i, a, b))
    if not links:
        raise SchemaError("at least one link is required")

    # link graph must be connected
    reached = {links[0].a}
    frontier = [links[0].a]
    while frontier:
        node = frontier.pop()
        for l in links:
            for nxt in (l.a, l.b):
                if node in (l.a, l.b) and nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
    if reached != set(participants):
        missing = sorted(set(participants) - reached)
        raise SchemaError(f"link graph is not connected (unreached: {', '.join(missing)})")

    meshes: dict[str, CouplingMesh] = {}
    for raw in _require(doc, "meshes", list, "schema"):
        name = _require(raw, "name", str, "mesh")
        where = f"mesh {name!r}"
        dim = _require(raw, "dim", int, where)
        if dim not in (2, 3):
            raise SchemaError(f"{where}: dim must be 2 or 3")
        owner = _require(raw, "owner", str, where)
        if owner not in participants:
            raise SchemaError(f"{where}: owner {owner!r} is not a declared participant")
        verts_raw = _require(raw, "vertices", list, where)
        if not verts_raw:
            raise SchemaError(f"{where}: needs at least one vertex")
        vertices = []
        for v in verts_raw:
            if not (isinstance(v, list) and len(v) == dim):
                raise SchemaError(f"{where}: every vertex must have {dim} coordinates")
            vertices.append(tuple(float(x) for x in v))
        weights = tuple(float(w) for w in _require(raw, "face_weights", list, where))
        if len(weights) != len(vertices):
            raise SchemaError(f"{where}: face_weights must match vertex count")
        if any(w < 0 for w in weights):
            raise SchemaError(f"{where}: face_weights must be nonnegative")
        if name in meshes:
            raise SchemaError(f"duplicate mesh {name!r}")
        meshes[name] = CouplingMesh(name, dim, owner, tuple(vertices), weights)

    window_size = float(_require(doc, "window_size", float, "schema"))
    end_time = float(_require(doc, "end_time", float, "schema"))
    if window_size <= 0:
        raise SchemaError("window_size must be positive")
    if end_time <= 0:
        raise SchemaError("end_time must be positive")
    windows = end_time / window_size
    if abs(windows - round(windows)) > REL_TIME_TOL * max(1.0, windows):
        raise SchemaError("end_time not multiple of window_size")

    fields: dict[str, FieldSpec] = {}
    schema_stub = None  # filled after fields, used for link routing checks
    for raw in _require(doc, "fields", list, "schema"):
        name = _require(raw, "name", str, "field")
        mesh = _require(raw, "mesh", str, f"field {name!r}")
        where = f"field {name!r} on mesh {mesh!r}"
        if mesh not in meshes:
            raise SchemaError(f"{where}: mesh {mesh!r} is not declared")
        components = _require(raw, "components", int, where)
        if components not in (1, meshes[mesh].dim):
            raise SchemaError(f"{where}: components must be 1 or {meshes[mesh].dim}")
        writer = _require(raw, "writer", str, where)
        if writer not in participants:
            raise SchemaError(f"{where}: writer {writer!r} is not a declared participant")
        owner = meshes[mesh].owner
        if writer == owner:
            raise SchemaError(f"{where}: writer equals mesh owner {owner!r}; nobody would read it")
        if not any({l.a, l.b} == {writer, owner} for l in links):
            raise SchemaError(f"{where}: no link joins writer {writer!r} and mesh owner {owner!r}")
        spec = FieldSpec(name, mesh, components, writer)
        if spec.qualified in fields:
            raise SchemaError(f"duplicate field {spec.qualified!r}")
        fields[spec.qualified] = spec
    if not fields:
        raise SchemaError("at least one field is required")

    schema_stub = CouplingSchema(
        participants=participants,
        links=tuple(links),
        meshes=meshes,
        fields=fields,
        window_size=window_size,
        end_time=end_time,
    )
    return schema_stub


def load_schema_file(path) -> CouplingSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return load_schema(fh.read())


def times_are_close(a: float, b: float, abs_tol: float = 1e-12) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=abs_tol)
