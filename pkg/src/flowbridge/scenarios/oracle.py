"""In-process reference episodes for the cylinder scenarios.

These loops reuse the solver's own integration functions and mirror the
coupled system's timing exactly: forces/probes are sampled at window
starts, commanded actions ramp linearly over the K sub-windows of a step,
and the solver ramps the received value across each window.  The only
liberty taken is that the feedback laws below read the oscillator state
directly instead of reconstructing it from probes, which is what makes
them oracles rather than policies.

Two reference controllers matter:

* baseline, u = 0, which also calibrates the scenario's cd_base (the mean
  drag coefficient over all windows of the unactuated episode), and
* opposition control, u = clamp(-0.5 dq, -1, 1), the hand-crafted damping
  law whose return improvement over baseline is the bar that a trained
  policy must reach half of.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..solvers.wake import WakeParams, clamp, forces, integrate_window, substeps_per_window
from .cylinder import CylinderConfig


@dataclass(frozen=True)
class EpisodeTrace:
    times: list[float]  # window starts
    cds: list[float]
    cls: list[float]
    actions: list[float]  # normalized u applied across each window
    step_rewards: list[float]

    @property
    def episode_return(self) -> float:
        return sum(self.step_rewards)

    def mean_cd(self, tail_fraction: float = 1.0) -> float:
        n = len(self.cds)
        start = n - max(1, round(n * tail_fraction))
        window = self.cds[start:]
        return sum(window) / len(window)


def simulate_cylinder_episode(cfg: CylinderConfig, controller=None) -> EpisodeTrace:
    """Run one episode against the wake model without any transport.

    ``controller(step_idx, q, dq) -> normalized u command`` is sampled once
    per control step; None means the unactuated baseline.
    """
    wake: WakeParams = cfg.wake
    window = cfg.window_size
    n_sub = substeps_per_window(window, wake.solver_dt)
    k_per_step = cfg.substeps_per_action
    n_steps = cfg.steps_per_episode

    q, dq = wake.q0, wake.dq0
    u_prev_cmd = 0.0
    u_prev_end = 0.0
    times, cds, cls, actions = [], [], [], []
    step_rewards = []
    t = 0.0
    for step in range(n_steps):
        u_cmd = 0.0 if controller is None else clamp(float(controller(step, q, dq)), -1.0, 1.0)
        step_cd, step_cl = 0.0, 0.0
        for k in range(1, k_per_step + 1):
            u_k = clamp(u_prev_cmd + (k / k_per_step) * (u_cmd - u_prev_cmd), -1.0, 1.0)
            cd, cl = forces(q, wake)
            times.append(t)
            cds.append(cd)
            cls.append(cl)
            actions.append(u_k)
            step_cd += cd
            step_cl += cl
            q, dq = integrate_window(q, dq, u_prev_end, u_k, window, wake, n_sub)
            u_prev_end = u_k
            t += window
        u_prev_cmd = u_cmd
        mean_cd = step_cd / k_per_step
        mean_cl = step_cl / k_per_step
        step_rewards.append((cfg.cd_base - mean_cd) - cfg.lift_penalty * abs(mean_cl))
    return EpisodeTrace(times, cds, cls, actions, step_rewards)


def opposition_controller(step: int, q: float, dq: float) -> float:
    return clamp(-0.5 * dq, -1.0, 1.0)


def calibrate_cd_base(cfg: CylinderConfig) -> float:
    """Mean drag coefficient of the unactuated episode (the reward's zero
    point for the drag term)."""
    trace = simulate_cylinder_episode(cfg, controller=None)
    return sum(trace.cds) / len(trace.cds)


@dataclass(frozen=True)
class OppositionOracle:
    cd_base: float
    baseline_return: float
    opposition_return: float
    baseline_tail_cd: float
    opposition_tail_cd: float

    @property
    def improvement(self) -> float:
        return self.opposition_return - self.baseline_return


def run_opposition_oracle(cfg: CylinderConfig, tail_fraction: float = 0.25) -> OppositionOracle:
    baseline = simulate_cylinder_episode(cfg, controller=None)
    opposed = simulate_cylinder_episode(cfg, controller=opposition_controller)
    return OppositionOracle(
        cd_base=cfg.cd_base,
        baseline_return=baseline.episode_return,
        opposition_return=opposed.episode_return,
        baseline_tail_cd=baseline.mean_cd(tail_fraction),
        opposition_tail_cd=opposed.mean_cd(tail_fraction),
    )
