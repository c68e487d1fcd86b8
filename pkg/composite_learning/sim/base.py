"""Interface shared by the simulated tasks."""

from __future__ import annotations

import logging
from typing import Any, Dict, Sequence

import numpy as np

from composite_learning.errors import CompositeLearningError


logger = logging.getLogger(__name__)

TICK = 0.001


class SimulationError(CompositeLearningError):
    """Raised for invalid simulation requests"""

    pass


class OracleDivergence(SimulationError):
    """Raised when a simulated state becomes non-finite"""

    pass


class Task:
    """A simulated task driven at one control tick per step.

    Sensed vectors hold ``physical_dim`` physical channels followed by the
    elapsed time. Policies regress on the physical channels only; the time
    channel exists so time-out transitions are ordinary threshold conditions.
    """

    name = "task"
    physical_dim = 0
    control_dim = 0
    captured_channels = 0
    tick = TICK

    @property
    def sensed_dim(self) -> int:
        return self.physical_dim + 1

    def initial_state(self, rng: np.random.Generator) -> Any:
        raise NotImplementedError

    def step(self, state: Any, control: np.ndarray) -> Any:
        """Advance the robot's dynamics one tick."""
        raise NotImplementedError

    def sense(self, state: Any, elapsed: float) -> np.ndarray:
        """Sensed vector from the robot's own sensors."""
        raise NotImplementedError

    def captured_positions(self, state: Any) -> np.ndarray:
        """Positions tracked by the motion-capture stand-in."""
        raise NotImplementedError

    def sense_captured(self, state: Any, estimates: np.ndarray, elapsed: float) -> np.ndarray:
        """Sensed vector built from reconstructed ``(position, velocity)`` estimates."""
        raise NotImplementedError

    def on_fired(self, state: Any, transition_id: str) -> Any:
        """Hook for transitions that change the task's discrete mode."""
        return state

    def ground_truth(self, state: Any, terminal: str, elapsed: float, budget: float) -> Dict[str, Any]:
        """Success flag and score of a finished episode."""
        raise NotImplementedError

    def describe(self) -> Dict[str, str]:
        return {"task": self.name}


def check_finite(values: Sequence[float], what: str) -> None:
    if not np.all(np.isfinite(values)):
        logger.error("Non-finite %s: %s", what, values)
        raise OracleDivergence(f"non-finite {what}: {list(values)}")
