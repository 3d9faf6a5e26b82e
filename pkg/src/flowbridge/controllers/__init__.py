"""Decision-making side: a from-scratch PPO agent and the open-loop
sinusoidal controller.

Everything here is plain numpy with hand-written reverse-mode gradients;
the test suite checks them against central finite differences, so the
optimizer never depends on an autodiff framework.
"""

from .ppo import PPOConfig, gae, init_policy, policy_forward, ppo_loss, value_forward
from .sine import SineController
from .train import TrainingLog, train

__all__ = [
    "PPOConfig",
    "SineController",
    "TrainingLog",
    "gae",
    "init_policy",
    "policy_forward",
    "ppo_loss",
    "train",
    "value_forward",
]
