"""Byte transports between participant processes.

Two transports share one Connection interface:

* TCP on 127.0.0.1 (default) or a named local socket, for participants
  running as separate OS processes.  Endpoint strings look like
  ``tcp:127.0.0.1:45001`` or ``local:/tmp/run/link.sock``.
* an in-process pipe pair (``fake_pair``) used by the test suite in place
  of real sockets.

A multi-link coupled run hands every participant one *base* endpoint (the
``FLOWBRIDGE_ENDPOINT`` environment variable or ``--endpoint`` flag); the
address of link *k* of the schema is derived from it with
``link_endpoint``: TCP adds k to the port, local sockets append ``.k`` to
the path.
"""

from __future__ import annotations

import os
import socket
import threading
import time
from dataclasses import dataclass

from .errors import CouplingError
from .wire import HEADER_SIZE, Message, decode_header, decode_payload, encode_frame

CONNECT_BACKOFF = 0.1
DEFAULT_RETRY_BUDGET = 300
DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class Endpoint:
    """Parsed endpoint: kind is "tcp" (host, port) or "local" (path)."""

    kind: str
    host: str = ""
    port: int = 0
    path: str = ""

    def __str__(self) -> str:
        if self.kind == "tcp":
            return f"tcp:{self.host}:{self.port}"
        return f"local:{self.path}"


def parse_endpoint(text: str) -> Endpoint:
    if text.startswith("tcp:"):
        rest = text[4:]
        host, sep, port = rest.rpartition(":")
        if not sep or not host:
            raise CouplingError(f"malformed tcp endpoint {text!r}")
        try:
            return Endpoint("tcp", host=host, port=int(port))
        except ValueError:
            raise CouplingError(f"malformed tcp endpoint {text!r}") from None
    if text.startswith("local:"):
        path = text[6:]
        if not path:
            raise CouplingError(f"malformed local endpoint {text!r}")
        return Endpoint("local", path=path)
    raise CouplingError(f"unknown endpoint scheme {text!r}")


def link_endpoint(base: Endpoint, link_index: int) -> Endpoint:
    """Address of schema link ``link_index`` derived from the base endpoint."""
    if base.kind == "tcp":
        return Endpoint("tcp", host=base.host, port=base.port + link_index)
    return Endpoint("local", path=f"{base.path}.{link_index}")


def endpoint_from_env() -> Endpoint:
    from . import ENDPOINT_ENV_VAR

    value = os.environ.get(ENDPOINT_ENV_VAR)
    if not value:
        raise CouplingError(f"{ENDPOINT_ENV_VAR} is not set")
    return parse_endpoint(value)


class Connection:
    """One reliable ordered byte stream carrying protocol frames.

    A connection is single-owner per direction: at most one reader and one
    writer thread at a time.
    """

    def write_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def read_bytes(self, n: int, timeout: float | None) -> bytes:
        """Read exactly n bytes; raise CouplingError on EOF or timeout."""
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def send_msg(self, msg: Message) -> None:
        self.write_bytes(encode_frame(msg))

    def recv_msg(self, timeout: float | None = DEFAULT_TIMEOUT) -> Message:
        header = self.read_bytes(HEADER_SIZE, timeout)
        mtype, length = decode_header(header)
        payload = self.read_bytes(length, timeout) if length else b""
        return decode_payload(mtype, payload)


class SocketConnection(Connection):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setblocking(True)
        if sock.family == socket.AF_INET:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def write_bytes(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise CouplingError(f"connection write failed: {exc}") from exc

    def read_bytes(self, n: int, timeout: float | None) -> bytes:
        self._sock.settimeout(timeout)
        chunks = []
        got = 0
        while got < n:
            try:
                chunk = self._sock.recv(n - got)
            except socket.timeout:
                raise CouplingError(f"read timed out after {timeout} s") from None
            except OSError as exc:
                raise CouplingError(f"connection read failed: {exc}") from exc
            if not chunk:
                raise CouplingError("connection closed by peer")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class Listener:
    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint
        if endpoint.kind == "tcp":
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                sock.bind((endpoint.host, endpoint.port))
            except OSError as exc:
                sock.close()
                raise CouplingError(f"cannot bind {endpoint}: {exc}") from exc
            if endpoint.port == 0:
                self.endpoint = Endpoint("tcp", host=endpoint.host, port=sock.getsockname()[1])
        else:
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            try:
                if os.path.exists(endpoint.path):
                    os.unlink(endpoint.path)
                sock.bind(endpoint.path)
            except OSError as exc:
                sock.close()
                raise CouplingError(f"cannot bind {endpoint}: {exc}") from exc
        sock.listen(8)
        self._sock = sock

    def accept(self, timeout: float | None = DEFAULT_TIMEOUT) -> Connection:
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
        except socket.timeout:
            raise CouplingError(f"accept on {self.endpoint} timed out") from None
        except OSError as exc:
            raise CouplingError(f"accept on {self.endpoint} failed: {exc}") from exc
        return SocketConnection(conn)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
        if self.endpoint.kind == "local":
            try:
                os.unlink(self.endpoint.path)
            except OSError:
                pass


def listen(endpoint: Endpoint) -> Listener:
    return Listener(endpoint)


def connect(endpoint: Endpoint, retry_budget: int = DEFAULT_RETRY_BUDGET) -> Connection:
    """Connect with fixed 100 ms backoff until the budget of attempts is spent."""
    last: Exception | None = None
    for attempt in range(retry_budget):
        if endpoint.kind == "tcp":
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            address: object = (endpoint.host, endpoint.port)
        else:
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            address = endpoint.path
        sock.settimeout(5.0)
        try:
            sock.connect(address)
            return SocketConnection(sock)
        except OSError as exc:
            sock.close()
            last = exc
            if attempt + 1 < retry_budget:
                time.sleep(CONNECT_BACKOFF)
    raise CouplingError(f"connect to {endpoint} failed after {retry_budget} attempts: {last}")


class _PipeBuffer:
    """One direction of the in-process fake transport (FIFO byte stream)."""

    def __init__(self):
        self._buf = bytearray()
        self._closed = False
        self._cond = threading.Condition()

    def write(self, data: bytes) -> None:
        with self._cond:
            if self._closed:
                return  # like TCP before the reset arrives: bytes vanish
            self._buf.extend(data)
            self._cond.notify_all()

    def read(self, n: int, timeout: float | None) -> bytes:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            # bytes written before the close stay readable
            while len(self._buf) < n:
                if self._closed:
                    raise CouplingError("connection closed by peer")
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise CouplingError(f"read timed out after {timeout} s")
                self._cond.wait(remaining)
            out = bytes(self._buf[:n])
            del self._buf[:n]
            return out

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class FakeConnection(Connection):
    def __init__(self, rx: _PipeBuffer, tx: _PipeBuffer):
        self._rx = rx
        self._tx = tx

    def write_bytes(self, data: bytes) -> None:
        self._tx.write(data)

    def read_bytes(self, n: int, timeout: float | None) -> bytes:
        return self._rx.read(n, timeout)

    def close(self) -> None:
        self._rx.close()
        self._tx.close()


def fake_pair() -> tuple[FakeConnection, FakeConnection]:
    """Two in-process connection halves; bytes written to one are read from the other."""
    a2b = _PipeBuffer()
    b2a = _PipeBuffer()
    return FakeConnection(b2a, a2b), FakeConnection(a2b, b2a)


class RecordingConnection(Connection):
    """Wrap a connection, keeping a log of sent/received frames (test utility)."""

    def __init__(self, inner: Connection):
        self.inner = inner
        self.sent: list[bytes] = []
        self.received: list[bytes] = []
        self._rxbuf = b""

    def write_bytes(self, data: bytes) -> None:
        self.sent.append(data)
        self.inner.write_bytes(data)

    def read_bytes(self, n: int, timeout: float | None) -> bytes:
        data = self.inner.read_bytes(n, timeout)
        self.received.append(data)
        return data

    def close(self) -> None:
        self.inner.close()


__all__ = [
    "Connection",
    "Endpoint",
    "FakeConnection",
    "Listener",
    "RecordingConnection",
    "connect",
    "endpoint_from_env",
    "fake_pair",
    "link_endpoint",
    "listen",
    "parse_endpoint",
]
