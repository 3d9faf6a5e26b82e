"""Lock-step vector environment."""

import json
import math

import pytest

from flowbridge.adapter import BoxSpace, EnvHooks, EnvInstance, EnvOptions
from flowbridge.errors import EnvError
from flowbridge.launch import InProcessLauncher
from flowbridge.vecenv import VecEnv

from conftest import make_pair_schema, run_frame_echo_peer


class ScalarHooks(EnvHooks):
    def __init__(self):
        self.action_space = BoxSpace.symmetric(10.0, 1)
        self.observation_space = BoxSpace.symmetric(math.inf, 1)
        self.substeps_per_action = 1
        self.seeds = []

    def get_action(self, action, write_specs):
        return {"act/Cmd": [float(action[0])]}

    def get_observation(self, read_buffers, read_specs, t):
        return list(read_buffers["obs/Out"])

    def get_reward(self, window_trace, t):
        return window_trace[-1][1]["obs/Out"][0]

    def on_reset(self, seed):
        self.seeds.append(seed)


def build_vec(tmp_path, n, fail_on=None, end_time=0.3):
    schema = make_pair_schema(nv=1, components=1, window_size=0.1, end_time=end_time)
    (tmp_path / "schema.json").write_text(json.dumps(json.loads(schema.canonical_json())))
    envs = []
    for idx in range(n):
        fail = "die-after-1" if fail_on == idx else None
        options = EnvOptions(
            environment_name="vec-test",
            solvers=("echo",),
            reset_script="reset.sh",
            run_script="run.sh",
            read_from={"Out": "obs"},
            write_to={"act": "Cmd"},
            base_dir=tmp_path,
        )
        launcher = InProcessLauncher(
            schema, {"echo": lambda links, fail=fail: run_frame_echo_peer(links["controller"], schema, fail)}
        )
        env = EnvInstance(options, ScalarHooks(), idx=idx, launcher=launcher, timeout=10.0)
        envs.append(env)
    return VecEnv(envs)


def test_identical_envs_identical_results(tmp_path):
    vec = build_vec(tmp_path, 4)
    obs = vec.reset(seed=5)
    assert obs == [[0.0]] * 4
    results = vec.step([[1.5]] * 4)
    assert all(r.observation == [1.5] for r in results)
    assert all(r.reward == results[0].reward for r in results)
    vec.close()


def test_per_instance_seeds(tmp_path):
    vec = build_vec(tmp_path, 3)
    vec.reset(seed=100)
    assert [env.hooks.seeds[-1] for env in vec.envs] == [100, 101, 102]
    vec.close()


def test_auto_reset_after_termination(tmp_path):
    vec = build_vec(tmp_path, 2, end_time=0.2)
    vec.reset()
    vec.step([[1.0]] * 2)
    results = vec.step([[1.0]] * 2)  # second of two steps: terminal
    assert all(r.terminated for r in results)
    # auto-reset already happened: instances are mid-fresh-episode
    assert all(env.episode_counter == 2 for env in vec.envs)
    results = vec.step([[2.0]] * 2)  # steps the fresh episodes
    assert all(not r.terminated for r in results)
    vec.close()


def test_single_env_behaves_like_instance(tmp_path):
    vec = build_vec(tmp_path, 1)
    vec.reset()
    out = vec.step([[3.0]])
    assert len(out) == 1 and out[0].observation == [3.0]
    vec.close()


def test_instance_failure_names_index(tmp_path):
    vec = build_vec(tmp_path, 3, fail_on=2)
    vec.reset()
    vec.step([[1.0]] * 3)
    with pytest.raises(EnvError, match="instance 2"):
        vec.step([[1.0]] * 3)
    vec.close()


def test_action_count_mismatch(tmp_path):
    vec = build_vec(tmp_path, 2)
    vec.reset()
    with pytest.raises(EnvError, match="2 environments"):
        vec.step([[1.0]])
    vec.close()
