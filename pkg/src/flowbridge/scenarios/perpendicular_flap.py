"""Perpendicular-flap FSI scenario: a jet sweeping along the channel inlet
loads a wall-mounted elastic flap through the fluid-channel / solid-flap
solver pair; the controller prescribes the jet center position and
observes the flap tip displacement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from ..adapter import BoxSpace, EnvHooks
from ..errors import EnvError
from ..schema import CouplingSchema, load_schema
from ..solvers.channel import ChannelParams
from ..solvers.wake import clamp

FLUID_NAME = "fluid-channel"
SOLID_NAME = "solid-flap"


@dataclass(frozen=True)
class FlapConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    window_size: float = 0.01
    end_time: float = 10.0
    substeps_per_action: int = 5
    y0: float = 0.4
    action_low: float = 0.1
    action_high: float = 0.9
    flap_x: float = 0.5
    flap_height: float = 0.35

    def __post_init__(self):
        if not 0.0 < self.action_low < self.action_high < self.channel.H:
            raise EnvError("flap action bounds must lie inside the channel (0, H)")

    @property
    def steps_per_episode(self) -> int:
        return round(self.end_time / (self.window_size * self.substeps_per_action))

    @property
    def step_dt(self) -> float:
        return self.window_size * self.substeps_per_action


def default_config() -> FlapConfig:
    return FlapConfig()


def build_schema_doc(cfg: FlapConfig) -> dict:
    tip = [cfg.flap_x, cfg.flap_height]
    return {
        "participants": ["controller", FLUID_NAME, SOLID_NAME],
        "links": [["controller", FLUID_NAME], [FLUID_NAME, SOLID_NAME]],
        "meshes": [
            {"name": "inlet", "dim": 2, "owner": FLUID_NAME,
             "vertices": [[0.0, cfg.channel.y_flap]], "face_weights": [1.0]},
            {"name": "tip-probe", "dim": 2, "owner": "controller",
             "vertices": [tip], "face_weights": [1.0]},
            {"name": "flap-load", "dim": 2, "owner": SOLID_NAME,
             "vertices": [[cfg.flap_x, cfg.flap_height / 2.0]], "face_weights": [1.0]},
            {"name": "flap-tip", "dim": 2, "owner": FLUID_NAME,
             "vertices": [tip], "face_weights": [1.0]},
        ],
        "fields": [
            {"name": "JetCenter", "mesh": "inlet", "components": 1, "writer": "controller"},
            {"name": "TipDisplacement", "mesh": "tip-probe", "components": 1, "writer": FLUID_NAME},
            {"name": "Force", "mesh": "flap-load", "components": 1, "writer": FLUID_NAME},
            {"name": "Displacement", "mesh": "flap-tip", "components": 1, "writer": SOLID_NAME},
        ],
        "window_size": cfg.window_size,
        "end_time": cfg.end_time,
    }


def build_schema(cfg: FlapConfig) -> CouplingSchema:
    return load_schema(json.dumps(build_schema_doc(cfg)))


def params_doc(cfg: FlapConfig) -> dict:
    channel = {name: getattr(cfg.channel, name) for name in ChannelParams.__dataclass_fields__}
    control = {
        "window_size": cfg.window_size,
        "end_time": cfg.end_time,
        "substeps_per_action": cfg.substeps_per_action,
        "y0": cfg.y0,
        "action_low": cfg.action_low,
        "action_high": cfg.action_high,
        "flap_x": cfg.flap_x,
        "flap_height": cfg.flap_height,
    }
    return {"channel": channel, "control": control}


def config_from_params_doc(doc: dict) -> FlapConfig:
    return FlapConfig(channel=ChannelParams.from_dict(doc["channel"]), **doc["control"])


def flap_get_action(y_c: float, low: float, high: float) -> dict[str, list[float]]:
    return {"inlet/JetCenter": [clamp(float(y_c), low, high)]}


class FlapHooks(EnvHooks):
    def __init__(self, cfg: FlapConfig, schema: CouplingSchema):
        self.cfg = cfg
        self.substeps_per_action = cfg.substeps_per_action
        self.action_space = BoxSpace((cfg.action_low,), (cfg.action_high,), 1)
        self.observation_space = BoxSpace.symmetric(math.inf, 1)

    def get_action(self, action, write_specs):
        return flap_get_action(action[0], self.cfg.action_low, self.cfg.action_high)

    def get_observation(self, read_buffers, read_specs, t):
        return [read_buffers["tip-probe/TipDisplacement"][0]]

    def get_reward(self, window_trace, t):
        if not window_trace:
            raise EnvError("no displacement samples recorded for this step")
        x = window_trace[-1][1]["tip-probe/TipDisplacement"][0]
        return -(x * x)


def scenario():
    from .assets import ScenarioBundle

    cfg = default_config()
    return ScenarioBundle(
        name="perpendicular-flap",
        config=cfg,
        schema_builder=lambda: build_schema(cfg),
        hooks_factory=lambda schema: FlapHooks(cfg, schema),
        params_builder=lambda: params_doc(cfg),
        solvers={
            FLUID_NAME: "flowbridge.solvers.channel",
            SOLID_NAME: "flowbridge.solvers.flap",
        },
    )


def with_overrides(cfg: FlapConfig, **kwargs) -> FlapConfig:
    return replace(cfg, **kwargs)
