"""Open-loop sinusoidal controller for the flap scenario."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class SineController:
    y0: float
    amplitude: float
    frequency: float  # Hz

    def __call__(self, t: float) -> float:
        return self.y0 + self.amplitude * math.sin(2.0 * math.pi * self.frequency * t)

    def check_bounds(self, low: float, high: float) -> None:
        """The controller must stay inside the action bounds for all t."""
        if self.y0 - abs(self.amplitude) < low or self.y0 + abs(self.amplitude) > high:
            raise ConfigError(
                f"sinusoid sweeps [{self.y0 - abs(self.amplitude)}, "
                f"{self.y0 + abs(self.amplitude)}], outside action bounds [{low}, {high}]"
            )
