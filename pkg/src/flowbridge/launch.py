"""Participant launchers: how an environment brings its solvers to life.

SubprocessLauncher reproduces the production layout: each solver lives in
its own instance directory (copied once from the scenario template), gets
``reset.sh`` run before every episode and ``run.sh`` spawned with
FLOWBRIDGE_ENDPOINT set, and logs to per-episode files.  The harness never
reaches into the solver beyond those two scripts.

InProcessLauncher drives the same participant code as threads over the
fake transport; the test suite uses it where process startup would only
add noise.  Both expose the same three calls: start_episode / end_episode
/ close.
"""

from __future__ import annotations

import os
import random
import shutil
import stat
import subprocess
import threading
import time
from pathlib import Path

from . import ENDPOINT_ENV_VAR
from .errors import CouplingError, EnvError
from .net import Connection, Endpoint, Listener, fake_pair, link_endpoint, listen
from .schema import CouplingSchema

STDERR_TAIL_BYTES = 2048

# every Popen the package ever started; tests assert none is left running
SPAWNED_PROCESSES: list[subprocess.Popen] = []


def assert_no_orphans() -> None:
    alive = [p.pid for p in SPAWNED_PROCESSES if p.poll() is None]
    if alive:
        raise AssertionError(f"orphaned solver processes: {alive}")


def _stderr_tail(path: Path) -> str:
    try:
        data = path.read_bytes()
    except OSError:
        return "<no stderr captured>"
    return data[-STDERR_TAIL_BYTES:].decode("utf-8", errors="replace")


class SubprocessLauncher:
    """Spawn solver participants as child processes, one set per episode."""

    def __init__(
        self,
        schema: CouplingSchema,
        solvers: list[str],
        template_dir: Path,
        instance_dir: Path,
        reset_script: str,
        run_script: str,
        controller: str = "controller",
        endpoint_base: str | None = None,
        timeout: float = 30.0,
    ):
        self.schema = schema
        self.solvers = solvers
        self.instance_dir = Path(instance_dir)
        self.reset_script = reset_script
        self.run_script = run_script
        self.controller = controller
        self.timeout = timeout
        self.episode = 0
        self.children: dict[str, subprocess.Popen] = {}
        self._log_paths: dict[str, tuple[Path, Path]] = {}

        for solver in solvers:
            src = Path(template_dir) / solver
            if not src.is_dir():
                raise EnvError(f"solver template directory {src} does not exist")
            dst = self.instance_dir / solver
            if not dst.exists():
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copytree(src, dst)
            for script in (reset_script, run_script):
                path = dst / script
                if not path.is_file():
                    raise EnvError(f"script {script!r} missing in {dst}")
                path.chmod(path.stat().st_mode | stat.S_IXUSR)

        self._controller_links = [l for l in schema.links_of(controller)]
        self._listeners: dict[int, Listener] = {}
        self.base = self._bind_listeners(endpoint_base)

    def _bind_listeners(self, endpoint_base: str | None) -> Endpoint:
        """Reserve a base endpoint whose derived per-link addresses are free.

        The controller binds its own link listeners up front (children then
        connect with retry); the remaining link addresses are probe-bound
        once so a colliding base is rejected before any child starts.
        """
        from .net import parse_endpoint

        n_links = len(self.schema.links)
        attempts = []
        if endpoint_base is not None:
            attempts = [parse_endpoint(endpoint_base)]
        else:
            rng = random.Random()
            attempts = [
                Endpoint("tcp", host="127.0.0.1", port=rng.randrange(20000, 55000))
                for _ in range(64)
            ]
        last_error: Exception | None = None
        for base in attempts:
            bound: dict[int, Listener] = {}
            probes: list[Listener] = []
            try:
                own = {l.index for l in self._controller_links}
                for k in range(n_links):
                    lst = listen(link_endpoint(base, k))
                    if k in own:
                        bound[k] = lst
                    else:
                        probes.append(lst)
                for p in probes:
                    p.close()
                self._listeners = bound
                return base
            except CouplingError as exc:
                last_error = exc
                for lst in list(bound.values()) + probes:
                    lst.close()
        raise EnvError(f"could not reserve a free endpoint block: {last_error}")

    def start_episode(self) -> dict[str, Connection]:
        self.episode += 1
        env = dict(os.environ)
        env[ENDPOINT_ENV_VAR] = str(self.base)

        for solver in self.solvers:
            cwd = self.instance_dir / solver
            out = cwd / f"episode_{self.episode:04d}.reset.log"
            with open(out, "wb") as log:
                proc = subprocess.run(
                    ["bash", self.reset_script], cwd=cwd, env=env,
                    stdout=log, stderr=subprocess.STDOUT,
                )
            if proc.returncode != 0:
                raise EnvError(
                    f"reset script {self.reset_script!r} for {solver!r} exited "
                    f"{proc.returncode}; log: {out}"
                )

        for solver in self.solvers:
            cwd = self.instance_dir / solver
            out_path = cwd / f"episode_{self.episode:04d}.out"
            err_path = cwd / f"episode_{self.episode:04d}.err"
            out = open(out_path, "wb")
            err = open(err_path, "wb")
            child = subprocess.Popen(
                ["bash", self.run_script], cwd=cwd, env=env, stdout=out, stderr=err,
            )
            out.close()
            err.close()
            SPAWNED_PROCESSES.append(child)
            self.children[solver] = child
            self._log_paths[solver] = (out_path, err_path)

        conns: dict[str, Connection] = {}
        try:
            for link in self._controller_links:
                peer = link.peer_of(self.controller)
                conns[peer] = self._accept_guarded(self._listeners[link.index])
        except Exception:
            for c in conns.values():
                c.close()
            self.end_episode()
            raise
        return conns

    def _accept_guarded(self, listener: Listener) -> Connection:
        deadline = time.monotonic() + self.timeout
        while True:
            self.check_children()
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise EnvError(f"no solver connected to {listener.endpoint} within {self.timeout} s")
            try:
                return listener.accept(min(0.25, remaining))
            except CouplingError:
                continue

    def check_children(self) -> None:
        for solver, child in self.children.items():
            code = child.poll()
            if code is not None and code != 0:
                _, err_path = self._log_paths[solver]
                raise EnvError(
                    f"solver {solver!r} exited with code {code} before the episode "
                    f"completed; stderr tail:\n{_stderr_tail(err_path)}"
                )

    def failure_detail(self) -> str:
        parts = []
        for solver, child in self.children.items():
            code = child.poll()
            _, err_path = self._log_paths.get(solver, (None, None))
            tail = _stderr_tail(err_path) if err_path else "<no log>"
            parts.append(f"{solver}: exit={code}; stderr tail:\n{tail}")
        return "\n".join(parts) if parts else "<no children>"

    def end_episode(self, grace: float = 5.0) -> None:
        for child in self.children.values():
            if child.poll() is None:
                child.terminate()
        deadline = time.monotonic() + grace
        for child in self.children.values():
            while child.poll() is None and time.monotonic() < deadline:
                time.sleep(0.01)
            if child.poll() is None:
                child.kill()
                child.wait()
        self.children.clear()

    def close(self) -> None:
        self.end_episode()
        for lst in self._listeners.values():
            lst.close()
        self._listeners.clear()


class InProcessLauncher:
    """Run participant callables as threads over the fake transport.

    ``participants`` maps each non-controller participant name to a
    callable taking its ``{peer: Connection}`` map.  Thread failures
    surface on the controller side as ERROR frames or dropped links, plus
    through failure_detail().
    """

    def __init__(self, schema: CouplingSchema, participants: dict, controller: str = "controller"):
        missing = set(schema.participants) - {controller} - set(participants)
        if missing:
            raise EnvError(f"no participant callable for: {', '.join(sorted(missing))}")
        self.schema = schema
        self.controller = controller
        self.participants = participants
        self.threads: list[threading.Thread] = []
        self.errors: list[str] = []

    def start_episode(self) -> dict[str, Connection]:
        link_maps: dict[str, dict[str, Connection]] = {p: {} for p in self.schema.participants}
        for link in self.schema.links:
            a_side, b_side = fake_pair()
            link_maps[link.a][link.b] = a_side
            link_maps[link.b][link.a] = b_side

        self.threads = []
        for name, run in self.participants.items():
            links = link_maps[name]

            def runner(run=run, links=links, name=name):
                try:
                    run(links)
                except Exception as exc:  # surfaces via failure_detail
                    self.errors.append(f"{name}: {type(exc).__name__}: {exc}")

            th = threading.Thread(target=runner, name=f"participant-{name}", daemon=True)
            th.start()
            self.threads.append(th)
        return link_maps[self.controller]

    def check_children(self) -> None:
        pass

    def failure_detail(self) -> str:
        return "\n".join(self.errors) if self.errors else "<no participant errors>"

    def end_episode(self, grace: float = 5.0) -> None:
        for th in self.threads:
            th.join(timeout=grace)
        self.threads = [th for th in self.threads if th.is_alive()]

    def close(self) -> None:
        self.end_episode()
