"""Scripted demonstrators standing in for the mentor.

Oracles act on the true simulation state and pick their behavior from the
place currently holding the token, so a demonstration's phase structure is
whatever the skill net says it is. Control noise is piecewise constant.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Dict, Optional, Tuple

import numpy as np

from composite_learning.sim.base import SimulationError, Task
from composite_learning.sim.nunchaku import NunchakuState, NunchakuTask
from composite_learning.sim.pendulum import PendulumState, PendulumTask, energy, upright_error


logger = logging.getLogger(__name__)

BACK_AND_FORTH = "back-and-forth"
JERK_UP = "jerk-up"
MIXED = "mixed"
VARIANTS = (BACK_AND_FORTH, JERK_UP)
CORPORA = (BACK_AND_FORTH, JERK_UP, MIXED)

NOISE_HOLD_TICKS = 100
JERK_FACTOR = 1.5

SWING = "swing"
CATCH = "catch"
ROLL = "roll"
HOLD = "hold"


class Oracle:
    """Base demonstrator: ``phases`` maps place ids to behaviors."""

    phases: Dict[str, str] = {}
    default_phase = SWING

    def __init__(self, limit: float, noise: float = 0.0, rng: Optional[np.random.Generator] = None) -> None:
        if noise < 0:
            raise SimulationError(f"oracle noise must be non-negative, got {noise!r}")
        self.limit = float(limit)
        self.noise = float(noise)
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._disturbance: Optional[np.ndarray] = None

    def phase(self, place: str) -> str:
        return self.phases.get(place, self.default_phase)

    def _noise(self, tick_index: int, size: int) -> np.ndarray:
        if self.noise == 0.0:
            return np.zeros(size)
        if self._disturbance is None or tick_index % NOISE_HOLD_TICKS == 0:
            self._disturbance = self._rng.normal(0.0, self.noise, size)
        return self._disturbance

    def command(self, state, phase: str) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, tick_index: int, state, sensed: np.ndarray, place: str, active: str) -> np.ndarray:
        clean = self.command(state, self.phase(place))
        return np.clip(clean + self._noise(tick_index, clean.shape[0]), -self.limit, self.limit)


class PendulumOracle(Oracle):
    """Energy-shaping swing-up followed by a PD catch near upright.

    The jerk-up variant pumps within ``pump_limit`` until ``burst_fraction``
    of the target energy is reached, then finishes with bursts up to
    ``limit``.
    """

    phases = {"P0": SWING, "P1": SWING, "P2": CATCH}

    def __init__(
        self,
        task: PendulumTask,
        pump_limit: float,
        limit: float,
        noise: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        energy_gain: float = 10.0,
        energy_margin: float = 0.02,
        burst_fraction: float = 0.6,
        catch_gains: Tuple[float, float] = (12.0, 3.0),
    ) -> None:
        super().__init__(limit, noise, rng)
        self.task = task
        self.pump_limit = float(pump_limit)
        self.energy_gain = energy_gain
        self.target_energy = 2.0 * task.params.mass * task.params.gravity * task.params.length + energy_margin
        self.burst_fraction = burst_fraction
        self.catch_gains = catch_gains

    def command(self, state: PendulumState, phase: str) -> np.ndarray:
        if phase == CATCH:
            kp, kd = self.catch_gains
            return np.array([-kp * upright_error(state.angle) - kd * state.velocity])
        current = energy(state, self.task.params)
        deficit = self.target_energy - current
        bound = self.pump_limit
        if self.limit > self.pump_limit and current >= self.burst_fraction * self.target_energy:
            bound = self.limit
        if abs(state.velocity) < 1e-3 and deficit > 0:
            # at rest the energy law has no direction; push toward the current lean
            direction = 1.0 if np.sin(state.angle) >= 0 else -1.0
            return np.array([direction * bound])
        return np.array([float(np.clip(self.energy_gain * deficit * state.velocity, -bound, bound))])


class NunchakuOracle(Oracle):
    """Phase-scheduled hand trajectory: pump the free stick, let it roll, hold."""

    phases = {"P0": SWING, "P1": SWING, "P2": ROLL, "P3": HOLD}

    def __init__(
        self,
        task: NunchakuTask,
        swing_gain: float,
        limit: float,
        noise: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__(limit, noise, rng)
        self.task = task
        self.swing_gain = float(swing_gain)

    def command(self, state: NunchakuState, phase: str) -> np.ndarray:
        x, z = state.hand_position
        vx, vz = state.hand_velocity
        if phase == SWING:
            pump = -self.swing_gain * np.tanh(state.stick_rate * np.cos(state.stick_angle) / 0.5)
            return np.array([pump - 4.0 * x - 4.0 * vx, -16.0 * z - 8.0 * vz])
        return np.array([-2.0 * vx, -2.0 * vz])


def make_oracle(
    task: Task, variant: str, noise: float = 0.0, rng: Optional[np.random.Generator] = None
) -> Tuple[Oracle, Task]:
    """Build a demonstrator and the mentor-side task it acts in.

    The jerk-up mentor is physically able to exceed the robot's actuator
    limit by ``JERK_FACTOR``; its demonstrations therefore record commands
    the robot cannot reproduce.

    Raises:
        SimulationError: For an unknown variant or task.
    """

    if variant not in VARIANTS:
        raise SimulationError(f"unknown oracle variant {variant!r}; expected one of {VARIANTS}")
    jerk = variant == JERK_UP
    if isinstance(task, PendulumTask):
        robot_limit = task.params.max_torque
        limit = JERK_FACTOR * robot_limit if jerk else robot_limit
        mentor = PendulumTask(replace(task.params, max_torque=limit), task.initial_angle)
        return PendulumOracle(mentor, robot_limit, limit, noise, rng), mentor
    if isinstance(task, NunchakuTask):
        robot_limit = task.params.max_acceleration
        limit = JERK_FACTOR * robot_limit if jerk else robot_limit
        mentor = NunchakuTask(
            replace(task.params, max_acceleration=limit), task.initial_stick_angle, task.grip_hooks
        )
        gain = 6.0 * JERK_FACTOR if jerk else 6.0
        return NunchakuOracle(mentor, gain, limit, noise, rng), mentor
    raise SimulationError(f"no oracle for task {task.name!r}")
