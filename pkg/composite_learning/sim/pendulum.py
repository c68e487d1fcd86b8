"""Torque-limited pendulum used for the swing-up task.

The angle is measured from the hanging position and is not wrapped, so the
motion-capture stand-in sees a continuous signal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from composite_learning.sim.base import TICK, SimulationError, Task, check_finite


logger = logging.getLogger(__name__)

UPRIGHT_ANGLE_TOLERANCE = 0.1
UPRIGHT_VELOCITY_TOLERANCE = 0.5
SUCCESS_PLACE = "PF_success"
INITIAL_ANGLE = 0.8


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    damping: float = 0.1
    max_torque: float = 2.0


DEFAULT_PARAMS = PendulumParams()


@dataclass(frozen=True)
class PendulumState:
    angle: float
    velocity: float
    torque: float = 0.0


def pendulum_step(
    state: PendulumState, u: float, tick: float = TICK, params: PendulumParams = DEFAULT_PARAMS
) -> PendulumState:
    """One semi-implicit Euler step with the torque saturated at ``max_torque``."""

    if not tick > 0:
        raise SimulationError(f"tick must be positive, got {tick!r}")
    applied = float(np.clip(u, -params.max_torque, params.max_torque))
    acceleration = (
        -(params.gravity / params.length) * np.sin(state.angle)
        + applied / (params.mass * params.length**2)
        - params.damping * state.velocity
    )
    velocity = state.velocity + tick * acceleration
    angle = state.angle + tick * velocity
    check_finite((angle, velocity), "pendulum state")
    return PendulumState(float(angle), float(velocity), applied)


def energy(state: PendulumState, params: PendulumParams = DEFAULT_PARAMS) -> float:
    """Mechanical energy, zero at the hanging rest position."""

    inertia = params.mass * params.length**2
    return 0.5 * inertia * state.velocity**2 + params.mass * params.gravity * params.length * (
        1.0 - np.cos(state.angle)
    )


def upright_error(angle: float) -> float:
    """Signed angle from the upright position, wrapped into ``[-pi, pi)``."""

    return float(np.mod(angle, 2.0 * np.pi) - np.pi)


def is_upright(state: PendulumState) -> bool:
    return (
        abs(upright_error(state.angle)) < UPRIGHT_ANGLE_TOLERANCE
        and abs(state.velocity) < UPRIGHT_VELOCITY_TOLERANCE
    )


def _sensed(angle: float, velocity: float, elapsed: float) -> np.ndarray:
    return np.array([-np.cos(angle), np.sin(angle), velocity, abs(velocity), elapsed])


class PendulumTask(Task):
    """Swing-up from rest at ``initial_angle``. Sensed: height, sin(angle), velocity, speed, time."""

    name = "pendulum"
    physical_dim = 4
    control_dim = 1
    captured_channels = 1

    def __init__(self, params: PendulumParams = DEFAULT_PARAMS, initial_angle: float = INITIAL_ANGLE) -> None:
        self.params = params
        self.initial_angle = float(initial_angle)

    def initial_state(self, rng: np.random.Generator) -> PendulumState:
        return PendulumState(self.initial_angle, 0.0)

    def step(self, state: PendulumState, control: np.ndarray) -> PendulumState:
        return pendulum_step(state, float(np.asarray(control).reshape(-1)[0]), self.tick, self.params)

    def sense(self, state: PendulumState, elapsed: float) -> np.ndarray:
        return _sensed(state.angle, state.velocity, elapsed)

    def captured_positions(self, state: PendulumState) -> np.ndarray:
        return np.array([state.angle])

    def sense_captured(self, state: PendulumState, estimates: np.ndarray, elapsed: float) -> np.ndarray:
        angle, velocity = estimates[0]
        return _sensed(angle, velocity, elapsed)

    def ground_truth(
        self, state: PendulumState, terminal: str, elapsed: float, budget: float
    ) -> Dict[str, Any]:
        success = terminal == SUCCESS_PLACE and is_upright(state)
        score = max(0.0, 1.0 - elapsed / budget) if success else 0.0
        return {"success": success, "score": score}

    def describe(self) -> Dict[str, str]:
        return {"task": self.name, "max_torque": repr(self.params.max_torque)}
