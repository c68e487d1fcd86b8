import numpy as np
import pytest

from composite_learning.apn import load_skill, parse_skill_definition, shipped_skill_path
from composite_learning.sim.demonstrate import (
    CaptureConfig,
    corpus_variants,
    demonstrate,
    generate_corpus,
    label_trace,
    ramped_noise,
)
from composite_learning.sim.base import SimulationError, Task
from composite_learning.sim.episode import policy_transitions, run_episode, stop_transitions
from composite_learning.sim.pendulum import PendulumTask


IMMEDIATE_STOP = """\
place A
place Done
transition stop lambda=1.0
arc A -> stop
arc stop -> Done
marking A 1
"""


def _idle(tick_index, state, sensed, place, active):
    return np.zeros(1)


@pytest.fixture
def task():
    return PendulumTask()


@pytest.fixture
def net():
    return load_skill(shipped_skill_path("pendulum"))


def test_stop_and_policy_transitions(net):
    assert stop_transitions(net) == ["t4", "t5", "t6"]
    assert policy_transitions(net) == ["t0", "t1", "t2", "t3", "t7"]


def test_immediate_stop_records_nothing(task):
    episode = run_episode(parse_skill_definition(IMMEDIATE_STOP), task, _idle, np.random.default_rng(0), 1.0)
    assert episode.terminal == "Done"
    assert len(episode.trace) == 0
    assert episode.trace.states.shape == (0, task.sensed_dim)
    assert episode.trace.last_fired == {"stop": 0}


def test_budget_bounds_the_trace(task, net):
    episode = run_episode(net, task, _idle, np.random.default_rng(0), 0.5, demo_id="idle")
    trace = episode.trace
    assert len(trace) == 500
    assert episode.terminal == ""
    assert trace.success is False
    assert trace.transitions[0] == "t0"
    assert set(trace.transitions[1:]) == {"t1"}
    assert trace.last_fired == {"t0": 0, "t1": 499}
    np.testing.assert_array_equal(trace.firing_state("t0"), trace.states[0])
    assert trace.metadata["time_budget"] == "0.5"
    assert trace.metadata["task"] == "pendulum"


def test_controller_sees_the_holding_place(task, net):
    places = []

    def controller(tick_index, state, sensed, place, active):
        places.append(place)
        return np.zeros(1)

    run_episode(net, task, controller, np.random.default_rng(0), 0.01)
    assert set(places) == {"P1"}


def test_label_trace_blames_the_last_active_transition(task, net):
    trace = run_episode(net, task, _idle, np.random.default_rng(0), 0.05).trace
    labeled = label_trace(trace)
    assert labeled.success is False
    assert labeled.per_transition_scores == {"t0": 0.5, "t1": 0.0}


def test_demonstrations_are_reproducible(task, net):
    first = demonstrate(task, net, seed=3, noise=0.5, time_budget=0.2, demo_id="a")
    second = demonstrate(task, net, seed=3, noise=0.5, time_budget=0.2, demo_id="a")
    np.testing.assert_array_equal(first.trace.states, second.trace.states)
    np.testing.assert_array_equal(first.trace.controls, second.trace.controls)
    assert first.trace.metadata["kind"] == "demonstration"
    assert first.trace.metadata["seed"] == "3"


def test_jerk_up_demonstrations_exceed_the_robot_limit(task, net):
    demo = demonstrate(task, net, seed=1, variant="jerk-up", time_budget=0.1)
    assert demo.trace.metadata["max_torque"] == "3.0"
    assert np.all(np.abs(demo.trace.controls) <= 3.0)


def test_capture_settings_reach_the_log(task, net):
    capture = CaptureConfig(frame_rate=60.0, frame_delay=2, measurement_noise=0.0)
    demo = demonstrate(task, net, seed=0, capture=capture, time_budget=0.1)
    assert demo.trace.metadata["frame_rate"] == "60.0"
    assert demo.trace.metadata["frame_delay"] == "2"
    assert CaptureConfig().channel(0.001).frame_period == 33


def test_corpus_variants():
    assert corpus_variants("mixed", 3) == ["back-and-forth", "jerk-up", "back-and-forth"]
    assert corpus_variants("jerk-up", 2) == ["jerk-up", "jerk-up"]
    with pytest.raises(SimulationError):
        corpus_variants("random", 2)


def test_ramped_noise():
    assert [ramped_noise(2.0, i, 5) for i in range(5)] == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert ramped_noise(2.0, 0, 5, ramp=False) == 2.0
    assert ramped_noise(2.0, 0, 1) == 2.0


def test_generate_corpus(task, net):
    demos = generate_corpus(task, net, 2, seed=5, noise=1.0, time_budget=0.05)
    assert [d.trace.demo_id for d in demos] == ["demo-000", "demo-001"]
    assert [d.trace.metadata["noise"] for d in demos] == ["0.0", "1.0"]
    assert demos[0].trace.metadata["spawn_key"] == "0"
    with pytest.raises(SimulationError):
        generate_corpus(task, net, 0, seed=5)


class LoadRampTask(Task):
    """Wrist load rising 5 N/s with no contact; the state is the tick count."""

    name = "load-ramp"
    physical_dim = 4
    control_dim = 2

    def initial_state(self, rng):
        return 0

    def step(self, state, control):
        return state + 1

    def sense(self, state, elapsed):
        return np.array([0.0, 5.0 * elapsed, 0.0, 0.0, elapsed])

    def ground_truth(self, state, terminal, elapsed, budget):
        return {"success": terminal == "PF_success", "score": 0.0}


def _still_hand(tick_index, state, sensed, place, active):
    return np.zeros(2)


def test_release_fires_on_the_first_tick_its_load_threshold_holds():
    net = load_skill(shipped_skill_path("nunchaku"))
    trace = run_episode(net, LoadRampTask(), _still_hand, np.random.default_rng(0), 4.5).trace

    assert trace.last_fired["t1"] == 490
    assert trace.last_fired["t2"] == 491
    assert trace.firing_state("t1")[1] <= 2.4525 < trace.firing_state("t2")[1]
    assert trace.terminal == "PF_fail"
    assert trace.firing_state("t7") is None
