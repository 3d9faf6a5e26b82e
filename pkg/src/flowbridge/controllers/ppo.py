"""PPO numerics: Gaussian policy, advantage estimation, clipped objective.

The policy is an MLP producing the action mean, with one learnable
per-dimension log standard deviation shared across states; a separate MLP
estimates values.  Actions live in a normalized space and are mapped to
physical bounds by the environment-side clamp, which keeps the stored
log-probabilities exact.

Per-sample objective, with ratio rho = exp(logp_new - logp_old) and
normalized advantage A:

    policy term   min(rho A, clip(rho, 1 - eps, 1 + eps) A)
    loss          -mean(policy term) + vf_coef mean((v - return)^2)
                  - ent_coef entropy

Gradients are assembled by hand and validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .mlp import MLP, init_mlp, mlp_backward, mlp_forward

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PolicyParams:
    pi: MLP
    log_std: np.ndarray
    vf: MLP

    @property
    def obs_dim(self) -> int:
        return self.pi.weights[0].shape[1]

    @property
    def act_dim(self) -> int:
        return self.pi.weights[-1].shape[0]

    def flat_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.pi.weights, self.pi.biases):
            out.extend((w, b))
        out.append(self.log_std)
        for w, b in zip(self.vf.weights, self.vf.biases):
            out.extend((w, b))
        return out


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 10
    minibatch: int = 20
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    n_envs: int = 4
    n_steps: int = 20
    total_episodes: int = 150
    seed: int = 0
    hidden: int = 64
    log_std_init: float = -0.5

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam <= 1.0):
            raise ConfigError("gamma and lam must lie in (0, 1]")
        if self.clip_eps < 0.0:
            raise ConfigError("clip_eps must be nonnegative")
        if (self.n_envs * self.n_steps) % self.minibatch:
            raise ConfigError(
                f"minibatch {self.minibatch} must divide n_envs*n_steps = {self.n_envs * self.n_steps}"
            )


def init_policy(obs_dim: int, act_dim: int, rng: np.random.Generator, hidden: int = 64,
                log_std_init: float = -0.5) -> PolicyParams:
    pi = init_mlp([obs_dim, hidden, hidden, act_dim], rng, out_scale=0.01)
    vf = init_mlp([obs_dim, hidden, hidden, 1], rng)
    return PolicyParams(pi=pi, log_std=np.full(act_dim, log_std_init), vf=vf)


def policy_forward(params: PolicyParams, obs: np.ndarray):
    """(mean, log_std) for a batch of observations."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if not np.all(np.isfinite(obs)):
        raise ConfigError("non-finite observation fed to the policy")
    mean, _ = mlp_forward(params.pi, obs)
    return mean, params.log_std


def value_forward(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    v, _ = mlp_forward(params.vf, obs)
    return v[:, 0]


def log_prob(mean: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    std = np.exp(log_std)
    z = (actions - mean) / std
    return (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=1)


def sample_actions(params: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    """Draw actions in the normalized space; returns (actions, log_probs)."""
    mean, log_std = policy_forward(params, obs)
    noise = rng.standard_normal(mean.shape)
    actions = mean + np.exp(log_std) * noise
    return actions, log_prob(mean, log_std, actions)


def entropy(log_std: np.ndarray) -> float:
    """Closed-form Gaussian entropy, sum over action dimensions."""
    return float(np.sum(0.5 + 0.5 * LOG_2PI + log_std))


def gae(rewards, values, terminateds, bootstrap_value, gamma: float, lam: float):
    """Backward advantage recursion over one trajectory.

    delta_t = r_t + gamma v_{t+1} (1 - term_t) - v_t
    A_t     = delta_t + gamma lam (1 - term_t) A_{t+1}

    returns (advantages, returns = advantages + values); arrays may be 1-D
    (single env) or (T, N).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    term = np.asarray(terminateds, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != term.shape:
        raise ConfigError("gae inputs must have identical shapes")
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    next_adv = np.zeros_like(next_value)
    for t in reversed(range(rewards.shape[0])):
        live = 1.0 - term[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        advantages[t] = next_adv
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (advantages - advantages.mean()) / (advantages.std() + eps)


def ppo_loss(params: PolicyParams, batch: dict, clip_eps: float, vf_coef: float, ent_coef: float):
    """Scalar loss plus diagnostics; see ppo_loss_and_grads for training."""
    loss, diagnostics, _ = ppo_loss_and_grads(
        params, batch, clip_eps, vf_coef, ent_coef, want_grads=False
    )
    return loss, diagnostics


def ppo_loss_and_grads(params: PolicyParams, batch: dict, clip_eps: float, vf_coef: float,
                       ent_coef: float, want_grads: bool = True):
    """Evaluate the clipped objective and, optionally, its exact gradients.

    batch holds "obs" (B, o), "actions" (B, a) in normalized space,
    "log_probs" (B,), "advantages" (B,) already normalized, "returns" (B,).
    """
    obs = np.asarray(batch["obs"], dtype=np.float64)
    actions = np.asarray(batch["actions"], dtype=np.float64)
    logp_old = np.asarray(batch["log_probs"], dtype=np.float64)
    adv = np.asarray(batch["advantages"], dtype=np.float64)
    returns = np.asarray(batch["returns"], dtype=np.float64)
    if obs.shape[0] == 0:
        raise ConfigError("empty batch")
    n = obs.shape[0]

    mean, pi_cache = mlp_forward(params.pi, obs)
    std = np.exp(params.log_std)
    z = (actions - mean) / std
    logp_new = (-0.5 * z * z - params.log_std - 0.5 * LOG_2PI).sum(axis=1)
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    policy_term = np.minimum(unclipped, clipped)
    policy_loss = -policy_term.mean()

    v, vf_cache = mlp_forward(params.vf, obs)
    v = v[:, 0]
    value_loss = np.mean((v - returns) ** 2)
    ent = entropy(params.log_std)
    loss = policy_loss + vf_coef * value_loss - ent_coef * ent
    if not np.isfinite(loss):
        raise ConfigError(
            f"non-finite loss (policy={policy_loss!r}, value={value_loss!r}, "
            f"ratio range=[{ratio.min()!r}, {ratio.max()!r}])"
        )

    diagnostics = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(ent),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "approx_kl": float(np.mean(logp_old - logp_new)),
    }
    if not want_grads:
        return float(loss), diagnostics, None

    # policy gradient flows only where the unclipped branch is active
    use_unclipped = unclipped <= clipped
    dlogp = np.where(use_unclipped, -(adv * ratio) / n, 0.0)
    dmean = dlogp[:, None] * (z / std)
    dlog_std = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0)
    dlog_std -= ent_coef  # d(-ent_coef * entropy)/dlog_std = -ent_coef per dim
    pi_grads = mlp_backward(params.pi, pi_cache, dmean)

    dv = (vf_coef * 2.0 * (v - returns) / n)[:, None]
    vf_grads = mlp_backward(params.vf, vf_cache, dv)

    grads = PolicyParams(pi=pi_grads, log_std=dlog_std, vf=vf_grads)
    return float(loss), diagnostics, grads
