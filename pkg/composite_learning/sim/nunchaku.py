"""Planar piecewise-pivot idealization of the nunchaku flip.

The hand holds one stick; the free stick is a point mass swinging about a
pivot whose hand-frame location depends on the grip mode:

    firm       tip of the held stick
    released   the chain anchor close to the fingers
    back_palm  the back of the palm
    regrasped  rigid with the hand

The robot senses a haptic contact scalar and the wrist load, plus its own
hand velocity; stick angles are never sensed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from composite_learning.sim.base import TICK, SimulationError, Task, check_finite


logger = logging.getLogger(__name__)

SUCCESS_PLACE = "PF_success"


class IllegalGripTransition(SimulationError):
    """Raised when a grip command skips or reverses the grip sequence"""

    pass


class GripMode(str, Enum):
    FIRM = "firm"
    RELEASED = "released"
    BACK_PALM = "back_palm"
    REGRASPED = "regrasped"


GRIP_SEQUENCE = (GripMode.FIRM, GripMode.RELEASED, GripMode.BACK_PALM, GripMode.REGRASPED)
CONTACT_MODES = (GripMode.BACK_PALM, GripMode.REGRASPED)


def _default_pivots() -> Dict[GripMode, Tuple[float, float]]:
    return {
        GripMode.FIRM: (0.3, 0.0),
        GripMode.RELEASED: (0.05, 0.0),
        GripMode.BACK_PALM: (0.02, -0.04),
        GripMode.REGRASPED: (0.02, -0.04),
    }


@dataclass(frozen=True)
class NunchakuParams:
    free_mass: float = 0.1
    stick_length: float = 0.15
    damping: float = 0.5
    gravity: float = 9.81
    max_acceleration: float = 8.0
    pivots: Dict[GripMode, Tuple[float, float]] = field(default_factory=_default_pivots)


DEFAULT_PARAMS = NunchakuParams()


@dataclass(frozen=True)
class NunchakuState:
    hand_position: Tuple[float, float] = (0.0, 0.0)
    hand_angle: float = 0.0
    hand_velocity: Tuple[float, float] = (0.0, 0.0)
    hand_rate: float = 0.0
    grip: GripMode = GripMode.FIRM
    stick_angle: float = 0.0
    stick_rate: float = 0.0
    contact: float = 0.0
    load: float = 0.0


def command_grip(state: NunchakuState, grip: GripMode) -> NunchakuState:
    """Move one step along the grip sequence; repeating the current mode is a no-op."""

    grip = GripMode(grip)
    if grip == state.grip:
        return state
    current = GRIP_SEQUENCE.index(state.grip)
    if GRIP_SEQUENCE.index(grip) != current + 1:
        raise IllegalGripTransition(f"cannot go from {state.grip.value} to {grip.value}")
    logger.debug("Grip %s -> %s", state.grip.value, grip.value)
    return replace(state, grip=grip)


def _pivot_acceleration(
    state: NunchakuState, accel: np.ndarray, angular: float, params: NunchakuParams
) -> np.ndarray:
    offset = np.array(params.pivots[state.grip])
    c, s = np.cos(state.hand_angle), np.sin(state.hand_angle)
    r = np.array([c * offset[0] - s * offset[1], s * offset[0] + c * offset[1]])
    return accel + angular * np.array([-r[1], r[0]]) - state.hand_rate**2 * r


def nunchaku_step(
    state: NunchakuState,
    controls,
    tick: float = TICK,
    grip: Optional[GripMode] = None,
    params: NunchakuParams = DEFAULT_PARAMS,
) -> NunchakuState:
    """Advance hand and free stick one tick.

    Args:
        state: Current state.
        controls: Hand accelerations ``[a_x, a_z]`` and optionally the angular
            acceleration of the hand.
        tick: Step length in seconds.
        grip: Optional grip command, applied before the step.
        params: Physical parameters.

    Raises:
        IllegalGripTransition: If ``grip`` is not the next mode in sequence.
    """

    if not tick > 0:
        raise SimulationError(f"tick must be positive, got {tick!r}")
    if grip is not None:
        state = command_grip(state, grip)
    controls = np.asarray(controls, dtype=float).reshape(-1)
    accel = np.clip(controls[:2], -params.max_acceleration, params.max_acceleration)
    angular = float(controls[2]) if controls.shape[0] > 2 else 0.0

    velocity = np.array(state.hand_velocity) + tick * accel
    position = np.array(state.hand_position) + tick * velocity
    hand_rate = state.hand_rate + tick * angular
    hand_angle = state.hand_angle + tick * hand_rate

    pivot = _pivot_acceleration(state, accel, angular, params)
    effective_z = params.gravity + pivot[1]
    psi, rate = state.stick_angle, state.stick_rate
    if state.grip != GripMode.REGRASPED:
        angular_accel = (
            -(effective_z * np.sin(psi) + pivot[0] * np.cos(psi)) / params.stick_length
            - params.damping * rate
        )
        rate = rate + tick * angular_accel
        psi = psi + tick * rate
    else:
        rate = 0.0

    tension = params.free_mass * (
        params.stick_length * rate**2 + effective_z * np.cos(psi) - pivot[0] * np.sin(psi)
    )
    load = abs(tension)
    if state.grip in CONTACT_MODES:
        contact = params.free_mass * float(np.hypot(pivot[0], effective_z)) * max(0.0, np.sin(psi))
    else:
        contact = 0.0
    check_finite((*position, *velocity, psi, rate, load, contact), "nunchaku state")
    return NunchakuState(
        hand_position=(float(position[0]), float(position[1])),
        hand_angle=float(hand_angle),
        hand_velocity=(float(velocity[0]), float(velocity[1])),
        hand_rate=float(hand_rate),
        grip=state.grip,
        stick_angle=float(psi),
        stick_rate=float(rate),
        contact=float(contact),
        load=float(load),
    )


def _default_grip_hooks() -> Dict[str, GripMode]:
    return {"t2": GripMode.RELEASED, "t3": GripMode.BACK_PALM, "t4": GripMode.REGRASPED}


class NunchakuTask(Task):
    """Swing, release, roll over the back of the palm, regrasp.

    Sensed: contact, wrist load, hand x/z velocity, time. Firing the release,
    back-palm and regrasp transitions commands the matching grip mode.
    """

    name = "nunchaku"
    physical_dim = 4
    control_dim = 2
    captured_channels = 2

    def __init__(
        self,
        params: NunchakuParams = DEFAULT_PARAMS,
        initial_stick_angle: float = 0.1,
        grip_hooks: Optional[Dict[str, GripMode]] = None,
    ) -> None:
        self.params = params
        self.initial_stick_angle = float(initial_stick_angle)
        self.grip_hooks = dict(grip_hooks) if grip_hooks is not None else _default_grip_hooks()

    def initial_state(self, rng: np.random.Generator) -> NunchakuState:
        return NunchakuState(stick_angle=self.initial_stick_angle)

    def step(self, state: NunchakuState, control: np.ndarray) -> NunchakuState:
        return nunchaku_step(state, control, self.tick, params=self.params)

    def sense(self, state: NunchakuState, elapsed: float) -> np.ndarray:
        vx, vz = state.hand_velocity
        return np.array([state.contact, state.load, vx, vz, elapsed])

    def captured_positions(self, state: NunchakuState) -> np.ndarray:
        return np.array(state.hand_position)

    def sense_captured(self, state: NunchakuState, estimates: np.ndarray, elapsed: float) -> np.ndarray:
        return np.array([state.contact, state.load, estimates[0][1], estimates[1][1], elapsed])

    def on_fired(self, state: NunchakuState, transition_id: str) -> NunchakuState:
        target = self.grip_hooks.get(transition_id)
        if target is None:
            return state
        return command_grip(state, target)

    def ground_truth(
        self, state: NunchakuState, terminal: str, elapsed: float, budget: float
    ) -> Dict[str, Any]:
        success = terminal == SUCCESS_PLACE
        return {"success": success, "score": max(0.0, 1.0 - elapsed / budget) if success else 0.0}
