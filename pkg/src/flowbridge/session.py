"""Per-participant state machine for the explicit serial coupling scheme.

A session advances through Created -> Initialized -> Running -> Finalized.
Within every time window each link performs exactly one exchange.  The
link's "from" participant leads (sends its DATA and ADVANCE, then blocks
for the peer's), the "to" participant follows (receives first, then sends).
A follower therefore reads the values its peer produced *for* the current
window before it runs its own computation, which is what makes the scheme
serial rather than parallel.

Window indices are carried on every DATA/ADVANCE frame and must increase
by exactly one per window; any disagreement aborts the session with an
ERROR frame rather than silently mis-slotting data.
"""

from __future__ import annotations

import enum

from . import wire
from .errors import CouplingError, PeerFinalized, ProtocolError, SchemaError, StateError
from .net import Connection, Endpoint, connect, link_endpoint, listen
from .schema import CouplingSchema, FieldSpec, LinkSpec

DEFAULT_TIMEOUT = 30.0


class SessionState(enum.Enum):
    CREATED = "created"
    INITIALIZED = "initialized"
    RUNNING = "running"
    FINALIZED = "finalized"


class CouplingSession:
    """Single-owner handle on one participant's side of a coupled run."""

    def __init__(
        self,
        schema: CouplingSchema,
        participant: str,
        links: dict[str, Connection],
        timeout: float = DEFAULT_TIMEOUT,
    ):
        if participant not in schema.participants:
            raise SchemaError(f"unknown participant {participant!r}")
        self.schema = schema
        self.participant = participant
        self.timeout = timeout
        self.state = SessionState.CREATED
        self.window_index = 0

        self._links: list[LinkSpec] = schema.links_of(participant)
        if not self._links:
            raise SchemaError(f"participant {participant!r} has no links")
        for link in self._links:
            peer = link.peer_of(participant)
            if peer not in links:
                raise CouplingError(f"no connection supplied for peer {peer!r}")
        self._conns = {link.index: links[link.peer_of(participant)] for link in self._links}
        self._registered: dict[str, tuple[tuple[float, ...], ...]] = {}
        self._write_bufs: dict[str, list[float]] = {}
        self._read_bufs: dict[str, list[float]] = {}

    # -- bookkeeping -----------------------------------------------------

    @property
    def window_size(self) -> float:
        return self.schema.window_size

    @property
    def end_time(self) -> float:
        return self.schema.end_time

    @property
    def t(self) -> float:
        return self.window_index * self.schema.window_size

    def _field_size(self, spec: FieldSpec) -> int:
        return self.schema.meshes[spec.mesh].vertex_count * spec.components

    def _my_meshes(self) -> list[str]:
        names: list[str] = []
        for link in self._links:
            for mesh in self.schema.meshes_on_link(link):
                if mesh.name not in names:
                    names.append(mesh.name)
        return names

    # -- setup -----------------------------------------------------------

    def set_mesh_vertices(self, mesh_name: str, coords) -> int:
        if self.state is not SessionState.CREATED:
            raise StateError("set_mesh_vertices must be called before initialize")
        if mesh_name not in self.schema.meshes:
            raise SchemaError(f"unknown mesh {mesh_name!r}")
        mesh = self.schema.meshes[mesh_name]
        frozen = tuple(tuple(float(x) for x in c) for c in coords)
        for c in frozen:
            if len(c) != mesh.dim:
                raise SchemaError(f"mesh {mesh_name!r}: vertex has {len(c)} coordinates, expected {mesh.dim}")
        if frozen != mesh.vertices:
            raise SchemaError(f"mesh {mesh_name!r}: registered vertices do not match the schema")
        self._registered[mesh_name] = frozen
        return len(frozen)

    def initialize(self) -> float:
        """Handshake every link; returns the coupling window size."""
        if self.state is not SessionState.CREATED:
            raise StateError(f"initialize called in state {self.state.value}")
        for name in self._my_meshes():
            if name not in self._registered:
                raise StateError(f"mesh {name!r} was not registered with set_mesh_vertices")

        digest = self.schema.digest()
        # Send everything first; handshakes are far smaller than any socket
        # buffer, so the symmetric order cannot deadlock.
        for link in self._links:
            conn = self._conns[link.index]
            conn.send_msg(wire.Hello(self.participant, digest))
            for mesh in self.schema.meshes_on_link(link):
                flat = [x for v in self._registered[mesh.name] for x in v]
                conn.send_msg(wire.Mesh(mesh.name, tuple(flat)))
            conn.send_msg(wire.InitAck())

        for link in self._links:
            conn = self._conns[link.index]
            peer = link.peer_of(self.participant)
            hello = self._recv(conn)
            if not isinstance(hello, wire.Hello):
                self._abort_link(link, f"expected HELLO, got {type(hello).__name__}")
            if hello.participant != peer:
                self._abort_link(link, f"expected peer {peer!r}, got {hello.participant!r}")
            if hello.schema_digest != digest:
                self._abort_link(link, "schema mismatch between peers")
            for mesh in self.schema.meshes_on_link(link):
                msg = self._recv(conn)
                if not isinstance(msg, wire.Mesh) or msg.mesh != mesh.name:
                    self._abort_link(link, f"expected MESH {mesh.name!r}")
                mine = tuple(x for v in self._registered[mesh.name] for x in v)
                if msg.coords != mine:
                    self._abort_link(link, f"mesh {mesh.name!r} differs between peers")
            ack = self._recv(conn)
            if not isinstance(ack, wire.InitAck):
                self._abort_link(link, f"expected INIT_ACK, got {type(ack).__name__}")

        for spec in self.schema.fields.values():
            size = self._field_size(spec)
            if spec.writer == self.participant:
                self._write_bufs[spec.qualified] = [0.0] * size
            if self.schema.reader_of(spec) == self.participant:
                self._read_bufs[spec.qualified] = [0.0] * size

        self.state = SessionState.INITIALIZED
        return self.schema.window_size

    # -- field buffers ---------------------------------------------------

    def write_field(self, name: str, values, mesh: str | None = None) -> None:
        if self.state not in (SessionState.INITIALIZED, SessionState.RUNNING):
            raise StateError(f"write_field called in state {self.state.value}")
        spec = self.schema.resolve_field(name, mesh)
        if spec.writer != self.participant:
            raise SchemaError(f"field {spec.qualified!r} is not written by {self.participant!r}")
        values = [float(v) for v in values]
        expected = self._field_size(spec)
        if len(values) != expected:
            raise SchemaError(
                f"field {spec.qualified!r} expects {expected} values, got {len(values)}"
            )
        self._write_bufs[spec.qualified] = values

    def read_field(self, name: str, mesh: str | None = None) -> list[float]:
        if self.state not in (SessionState.INITIALIZED, SessionState.RUNNING):
            raise StateError(f"read_field called in state {self.state.value}")
        spec = self.schema.resolve_field(name, mesh)
        if self.schema.reader_of(spec) != self.participant:
            raise SchemaError(f"field {spec.qualified!r} is not read by {self.participant!r}")
        return list(self._read_bufs[spec.qualified])

    # -- advancing -------------------------------------------------------

    def advance(self, dt: float) -> float:
        if self.state not in (SessionState.INITIALIZED, SessionState.RUNNING):
            raise StateError(f"advance called in state {self.state.value}")
        if abs(dt - self.schema.window_size) > 1e-12:
            raise CouplingError(
                f"advance dt {dt!r} does not equal the coupling window {self.schema.window_size!r}"
            )
        if self.window_index >= self.schema.window_count:
            raise StateError("coupling already reached end_time")

        for link in self._links:
            if self.participant == link.a:
                self._send_window(link)
                self._receive_window(link)
            else:
                self._receive_window(link)
                self._send_window(link)

        self.window_index += 1
        self.state = SessionState.RUNNING
        remaining = self.schema.end_time - self.t
        return min(self.schema.window_size, max(0.0, remaining))

    def is_coupling_ongoing(self) -> bool:
        if self.state is SessionState.CREATED:
            raise StateError("session not initialized")
        return self.window_index < self.schema.window_count

    def finalize(self) -> None:
        """Tell peers the run is over and drop connections; idempotent."""
        if self.state is SessionState.FINALIZED:
            return
        for link in self._links:
            conn = self._conns[link.index]
            try:
                conn.send_msg(wire.Finalize())
            except (CouplingError, ProtocolError, OSError):
                pass
            conn.close()
        self.state = SessionState.FINALIZED

    def abort(self, reason: str) -> None:
        """Send an ERROR frame on every link and drop connections."""
        if self.state is SessionState.FINALIZED:
            return
        for link in self._links:
            conn = self._conns[link.index]
            try:
                conn.send_msg(wire.Error(reason))
            except (CouplingError, ProtocolError, OSError):
                pass
            conn.close()
        self.state = SessionState.FINALIZED

    # -- internals -------------------------------------------------------

    def _recv(self, conn: Connection) -> wire.Message:
        msg = conn.recv_msg(self.timeout)
        if isinstance(msg, wire.Error):
            self.state = SessionState.FINALIZED
            raise CouplingError(f"peer reported error: {msg.reason}")
        if isinstance(msg, wire.Finalize):
            self.state = SessionState.FINALIZED
            raise PeerFinalized("peer finalized the coupled run")
        return msg

    def _abort_link(self, link: LinkSpec, reason: str) -> None:
        try:
            self._conns[link.index].send_msg(wire.Error(reason))
        except (CouplingError, ProtocolError, OSError):
            pass
        for l in self._links:
            self._conns[l.index].close()
        self.state = SessionState.FINALIZED
        raise CouplingError(reason)

    def _send_window(self, link: LinkSpec) -> None:
        conn = self._conns[link.index]
        frames = []
        for spec in self.schema.fields_on_link(link):
            if spec.writer == self.participant:
                frames.append(
                    wire.encode_frame(
                        wire.Data(spec.qualified, self.window_index, tuple(self._write_bufs[spec.qualified]))
                    )
                )
        frames.append(wire.encode_frame(wire.Advance(self.window_index)))
        conn.write_bytes(b"".join(frames))

    def _receive_window(self, link: LinkSpec) -> None:
        conn = self._conns[link.index]
        expected = {
            spec.qualified: spec
            for spec in self.schema.fields_on_link(link)
            if spec.writer == link.peer_of(self.participant)
        }
        got: set[str] = set()
        while True:
            msg = self._recv(conn)
            if isinstance(msg, wire.Data):
                if msg.field not in expected:
                    self._abort_link(link, f"unexpected DATA for field {msg.field!r}")
                if msg.field in got:
                    self._abort_link(link, f"duplicate DATA for field {msg.field!r}")
                if msg.window != self.window_index:
                    self._abort_link(
                        link,
                        f"out-of-order DATA for {msg.field!r}: window {msg.window}, expected {self.window_index}",
                    )
                size = self._field_size(expected[msg.field])
                if len(msg.values) != size:
                    self._abort_link(link, f"DATA for {msg.field!r} has {len(msg.values)} values, expected {size}")
                self._read_bufs[msg.field] = list(msg.values)
                got.add(msg.field)
            elif isinstance(msg, wire.Advance):
                if msg.window != self.window_index:
                    self._abort_link(link, f"out-of-order ADVANCE: window {msg.window}, expected {self.window_index}")
                missing = set(expected) - got
                if missing:
                    self._abort_link(link, f"peer advanced without sending {sorted(missing)}")
                return
            else:
                self._abort_link(link, f"unexpected {type(msg).__name__} during window exchange")


def establish_links(
    schema: CouplingSchema,
    participant: str,
    base: Endpoint,
    timeout: float = DEFAULT_TIMEOUT,
    retry_budget: int = 300,
) -> dict[str, Connection]:
    """Open one connection per schema link involving ``participant``.

    The link's "from" side listens on the derived endpoint and the "to"
    side connects (with retry), so start order between processes does not
    matter.  Used by solver participants; the controller side manages its
    listeners itself so it can bind before spawning children.
    """
    links = schema.links_of(participant)
    listeners = {}
    conns: dict[str, Connection] = {}
    try:
        for link in links:
            if participant == link.a:
                listeners[link.index] = listen(link_endpoint(base, link.index))
        for link in links:
            peer = link.peer_of(participant)
            if participant == link.a:
                conns[peer] = listeners[link.index].accept(timeout)
            else:
                conns[peer] = connect(link_endpoint(base, link.index), retry_budget)
        return conns
    except Exception:
        for c in conns.values():
            c.close()
        raise
    finally:
        for lst in listeners.values():
            lst.close()
