"""On-policy training loop: rollouts from the vector environment, then
minibatched clipped-objective updates with Adam.

Randomness is confined to two PCG64 streams spawned from the config seed
(stream 0 initializes parameters, stream 1 drives action sampling and
minibatch shuffling); per-environment seeds are seed + idx, forwarded by
the vector reset.  Identical seeds and scenario give bitwise identical
logs.

The policy acts in a normalized space; commands are mapped affinely onto
the environment's action bounds (and clamped) before stepping, so stored
log-probabilities always describe the raw Gaussian sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EnvError
from .mlp import Adam
from .ppo import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    PolicyParams,
    PPOConfig,
    gae,
    init_policy,
    normalize_advantages,
    policy_forward,
    ppo_loss_and_grads,
    sample_actions,
    value_forward,
)


@dataclass
class TrainingLog:
    episodes: list[tuple[int, int, float, int]] = field(default_factory=list)  # episode, env, return, length
    updates: list[tuple[int, float, float, float, float]] = field(default_factory=list)  # update, loss, clip_frac, kl, entropy


def action_mapper(space):
    low = np.asarray(space.low, dtype=np.float64)
    high = np.asarray(space.high, dtype=np.float64)

    def to_env(z: np.ndarray) -> list[float]:
        clipped = np.clip(z, -1.0, 1.0)
        return list(low + (clipped + 1.0) * 0.5 * (high - low))

    return to_env


def make_rngs(seed: int):
    init_seq, policy_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(policy_seq)


def train(vec_env, config: PPOConfig, policy: PolicyParams | None = None,
          on_episode=None, on_update=None):
    """Run PPO against a lock-step vector environment.

    Returns (params, TrainingLog).  Training stops once total_episodes
    episode rows are logged; rollouts always run to full length, so a last
    partial batch of episode completions past the target is dropped from
    the log.  Callbacks fire per logged episode row and per update row.
    """
    if vec_env.n_envs != config.n_envs:
        raise EnvError(f"config expects {config.n_envs} environments, vec has {vec_env.n_envs}")
    init_rng, policy_rng = make_rngs(config.seed)
    hooks = vec_env.envs[0].hooks
    obs_dim = hooks.observation_space.shape
    act_dim = hooks.action_space.shape
    params = policy if policy is not None else init_policy(
        obs_dim, act_dim, init_rng, hidden=config.hidden, log_std_init=config.log_std_init
    )
    log = TrainingLog()
    if config.total_episodes <= 0:
        return params, log

    to_env = action_mapper(hooks.action_space)
    flat = params.flat_arrays()
    adam = Adam([p.shape for p in flat], lr=config.lr)

    obs = np.asarray(vec_env.reset(seed=config.seed), dtype=np.float64)
    ep_return = np.zeros(config.n_envs)
    ep_length = np.zeros(config.n_envs, dtype=int)
    episode_no = 0
    update_no = 0

    while len(log.episodes) < config.total_episodes:
        t_obs = np.empty((config.n_steps, config.n_envs, obs_dim))
        t_act = np.empty((config.n_steps, config.n_envs, act_dim))
        t_logp = np.empty((config.n_steps, config.n_envs))
        t_val = np.empty((config.n_steps, config.n_envs))
        t_rew = np.empty((config.n_steps, config.n_envs))
        t_term = np.zeros((config.n_steps, config.n_envs))

        for t in range(config.n_steps):
            actions, logp = sample_actions(params, obs, policy_rng)
            values = value_forward(params, obs)
            results = vec_env.step([to_env(z) for z in actions])
            t_obs[t] = obs
            t_act[t] = actions
            t_logp[t] = logp
            t_val[t] = values
            for i, r in enumerate(results):
                t_rew[t, i] = r.reward
                t_term[t, i] = 1.0 if r.terminated else 0.0
                ep_return[i] += r.reward
                ep_length[i] += 1
            obs = np.asarray([r.observation for r in results], dtype=np.float64)
            for i, r in enumerate(results):
                if r.terminated:
                    episode_no += 1
                    if len(log.episodes) < config.total_episodes:
                        row = (episode_no, i, float(ep_return[i]), int(ep_length[i]))
                        log.episodes.append(row)
                        if on_episode:
                            on_episode(row)
                    ep_return[i] = 0.0
                    ep_length[i] = 0

        bootstrap = value_forward(params, obs)
        advantages, returns = gae(t_rew, t_val, t_term, bootstrap, config.gamma, config.lam)
        batch_obs = t_obs.reshape(-1, obs_dim)
        batch_act = t_act.reshape(-1, act_dim)
        batch_logp = t_logp.reshape(-1)
        batch_adv = normalize_advantages(advantages.reshape(-1))
        batch_ret = returns.reshape(-1)

        update_no += 1
        n_samples = batch_obs.shape[0]
        sums = {"loss": 0.0, "clip_frac": 0.0, "approx_kl": 0.0, "entropy": 0.0}
        n_minibatches = 0
        for _ in range(config.epochs):
            perm = policy_rng.permutation(n_samples)
            for start in range(0, n_samples, config.minibatch):
                idx = perm[start : start + config.minibatch]
                minibatch = {
                    "obs": batch_obs[idx],
                    "actions": batch_act[idx],
                    "log_probs": batch_logp[idx],
                    "advantages": batch_adv[idx],
                    "returns": batch_ret[idx],
                }
                loss, diag, grads = ppo_loss_and_grads(
                    params, minibatch, config.clip_eps, config.vf_coef, config.ent_coef
                )
                adam.step(flat, grads.flat_arrays())
                np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX, out=params.log_std)
                for key in sums:
                    sums[key] += diag[key]
                n_minibatches += 1
        row = (
            update_no,
            sums["loss"] / n_minibatches,
            sums["clip_frac"] / n_minibatches,
            sums["approx_kl"] / n_minibatches,
            sums["entropy"] / n_minibatches,
        )
        log.updates.append(row)
        if on_update:
            on_update(row)

    return params, log


def greedy_action(params: PolicyParams, obs, space) -> list[float]:
    """Deterministic policy: the mean action mapped onto the env bounds."""
    mean, _ = policy_forward(params, np.asarray(obs, dtype=np.float64))
    return action_mapper(space)(mean[0])
