from dataclasses import replace

import numpy as np
import pytest

from composite_learning.sim.base import SimulationError
from composite_learning.sim.pendulum import (
    DEFAULT_PARAMS,
    PendulumState,
    PendulumTask,
    energy,
    is_upright,
    pendulum_step,
    upright_error,
)
from composite_learning.sim.tasks import make_task


def _run(state, torque, ticks, params=DEFAULT_PARAMS):
    heights = []
    for _ in range(ticks):
        state = pendulum_step(state, torque, params=params)
        heights.append(-np.cos(state.angle))
    return state, max(heights)


def test_hanging_rest_is_an_equilibrium():
    assert pendulum_step(PendulumState(0.0, 0.0), 0.0) == PendulumState(0.0, 0.0, 0.0)


def test_torque_is_saturated():
    assert pendulum_step(PendulumState(0.0, 0.0), 5.0).torque == 2.0
    assert pendulum_step(PendulumState(0.0, 0.0), -5.0).torque == -2.0


def test_tick_must_be_positive():
    with pytest.raises(SimulationError):
        pendulum_step(PendulumState(0.0, 0.0), 0.0, tick=0.0)


def test_undamped_swing_conserves_energy():
    params = replace(DEFAULT_PARAMS, damping=0.0)
    start = PendulumState(0.5, 0.0)
    end, _ = _run(start, 0.0, 1000, params)
    assert energy(end, params) == pytest.approx(energy(start, params), rel=5e-3)


@pytest.mark.parametrize("torque", [2.0, -2.0])
def test_constant_torque_cannot_swing_up(torque):
    _, highest = _run(PendulumState(0.8, 0.0), torque, 10_000)
    assert highest < 0.98


def test_upright_error_wraps():
    assert upright_error(np.pi) == pytest.approx(0.0)
    assert upright_error(3.0 * np.pi) == pytest.approx(0.0)
    assert upright_error(0.0) == pytest.approx(-np.pi)


def test_is_upright():
    assert is_upright(PendulumState(np.pi + 0.05, 0.2))
    assert not is_upright(PendulumState(np.pi + 0.2, 0.0))
    assert not is_upright(PendulumState(np.pi, 1.0))


def test_sensed_vector_layout():
    task = PendulumTask()
    sensed = task.sense(PendulumState(0.0, -0.5), 1.5)
    np.testing.assert_allclose(sensed, [-1.0, 0.0, -0.5, 0.5, 1.5])
    assert sensed.shape == (task.sensed_dim,)


def test_initial_state_is_deterministic():
    task = PendulumTask(initial_angle=0.3)
    assert task.initial_state(np.random.default_rng(1)) == PendulumState(0.3, 0.0)


def test_ground_truth_requires_success_place_and_upright():
    task = PendulumTask()
    upright = PendulumState(np.pi, 0.0)
    assert task.ground_truth(upright, "PF_success", 2.0, 10.0) == {"success": True, "score": pytest.approx(0.8)}
    assert task.ground_truth(upright, "PF_fail", 2.0, 10.0)["success"] is False
    assert task.ground_truth(PendulumState(1.0, 0.0), "PF_success", 2.0, 10.0) == {"success": False, "score": 0.0}


def test_make_task():
    assert isinstance(make_task("pendulum"), PendulumTask)
    with pytest.raises(SimulationError):
        make_task("juggling")
