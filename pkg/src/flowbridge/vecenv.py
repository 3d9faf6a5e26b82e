"""Lock-step vectorized facade over several EnvInstances.

``step`` dispatches all instance steps concurrently and returns once every
one finished.  An instance that terminates reports its terminal
observation in the current batch and is reset automatically before the
next call; the fresh episode's first observation therefore shows up one
batch later.  Any instance failure aborts the whole batch with the
instance index attached.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from .adapter import EnvInstance, StepResult
from .errors import EnvError, StateError


class VecEnv:
    def __init__(self, envs: list[EnvInstance], auto_reset: bool = True):
        if not envs:
            raise EnvError("VecEnv needs at least one environment")
        self.envs = envs
        self.auto_reset = auto_reset
        self._pool = ThreadPoolExecutor(max_workers=len(envs), thread_name_prefix="vecenv")
        self._closed = False

    @property
    def n_envs(self) -> int:
        return len(self.envs)

    def _run_all(self, fn_name: str, per_env_args) -> list:
        futures = [
            self._pool.submit(getattr(env, fn_name), *args)
            for env, args in zip(self.envs, per_env_args)
        ]
        results = []
        failure: EnvError | None = None
        for i, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except Exception as exc:
                results.append(None)
                if failure is None:
                    failure = EnvError(f"instance {i}: {exc}")
                    failure.__cause__ = exc
        if failure is not None:
            raise failure
        return results

    def reset(self, seed: int | None = None) -> list[list[float]]:
        if self._closed:
            raise StateError("vector environment is closed")
        seeds = [(None,) if seed is None else (seed + i,) for i in range(self.n_envs)]
        return [obs for obs, _ in self._run_all("reset", seeds)]

    def step(self, actions) -> list[StepResult]:
        if self._closed:
            raise StateError("vector environment is closed")
        if len(actions) != self.n_envs:
            raise EnvError(f"got {len(actions)} actions for {self.n_envs} environments")
        results: list[StepResult] = self._run_all("step", [(a,) for a in actions])
        if self.auto_reset:
            # reset only the terminated instances, in parallel
            terminated = [i for i, r in enumerate(results) if r.terminated]
            futures = [self._pool.submit(self.envs[i].reset) for i in terminated]
            for i, fut in zip(terminated, futures):
                try:
                    fut.result()
                except Exception as exc:
                    raise EnvError(f"instance {i}: auto-reset failed: {exc}") from exc
        return results

    def close(self) -> None:
        if self._closed:
            return
        self._run_all("close", [()] * self.n_envs)
        self._pool.shutdown(wait=True)
        self._closed = True


def make_vec(options, hooks_factory, n: int, seed: int = 0, launcher_factory=None, **env_kwargs) -> VecEnv:
    """Build n lock-step environments with per-instance seeds seed + idx."""
    if n < 1:
        raise EnvError("need at least one environment")
    envs = []
    for idx in range(n):
        launcher = launcher_factory(idx) if launcher_factory is not None else None
        env = EnvInstance(options, hooks_factory(), idx=idx, launcher=launcher, **env_kwargs)
        env.seed = seed + idx
        envs.append(env)
    return VecEnv(envs)
