import json
import logging
from types import SimpleNamespace
from unittest.mock import patch

import numpy as np
import pytest

from composite_learning.apn import load_skill, parse_skill_definition, shipped_skill_path
from composite_learning.config import LoopConfig
from composite_learning.evaluation import LabeledDemonstration, TrialEvaluation, demo_weights
from composite_learning.sim.demonstrate import generate_corpus
from composite_learning.sim.demonstration import IDLE, Demonstration
from composite_learning.sim.loop import (
    BUDGET_EXHAUSTED,
    LEARNED,
    adapt_transition,
    apply_overrides,
    composite_learning_loop,
    policy_settings,
    render_report,
)
from composite_learning.sim.pendulum import PendulumTask
from composite_learning.sim.tasks import make_task
from composite_learning.sim.trial import fit_policies, run_trials, trial_seeds


CHAIN = """\
place A
place B
place C
transition go lambda=1.0
transition stop lambda=1.0
arc A -> go
arc go -> B
arc B -> stop
arc stop -> C
condition go proj=1.0,0.0 op=ge thresh=0.5
marking A 1
"""


@pytest.fixture
def chain():
    return parse_skill_definition(CHAIN)


@pytest.fixture
def runs():
    fired = Demonstration(
        "demo-000",
        0.001,
        np.arange(3) * 0.001,
        np.array([[0.0, 0.0], [0.8, 0.2], [0.9, 0.3]]),
        np.zeros((3, 1)),
        [IDLE, "go", "go"],
        {"last_fired": "go:1"},
    )
    unscored = Demonstration(
        "demo-001",
        0.001,
        np.arange(2) * 0.001,
        np.array([[0.0, 0.0], [0.3, 0.0]]),
        np.zeros((2, 1)),
        ["go", "go"],
        {"last_fired": "go:1"},
    )
    return [(fired, 1.0), (unscored, 0.0)]


def test_apply_overrides(chain):
    assert apply_overrides(chain, LoopConfig()) is chain
    tuned = apply_overrides(chain, LoopConfig(kappa=0.5, lambda_floor=0.2))
    assert (tuned.kappa, tuned.lambda_floor) == (0.5, 0.2)


def test_policy_settings_follow_the_config():
    settings = policy_settings(LoopConfig(max_subset=7, sample_stride=3))
    assert settings.max_subset == 7
    assert settings.sample_stride == 3


def test_decay_above_the_floor(chain, runs):
    events = []
    net = adapt_transition(apply_overrides(chain, LoopConfig(kappa=0.9)), "go", runs, 4, events)
    assert net.transition(0).firing_probability == pytest.approx(0.9)
    assert net.transition(0).condition.threshold == 0.5
    assert events == [{"trial": 4, "transition": "go", "event": "decay", "lambda": pytest.approx(0.9)}]


def test_condition_moves_to_successful_firing_states(chain, runs):
    events = []
    net = apply_overrides(chain, LoopConfig(kappa=0.5, lambda_floor=0.6))
    net = adapt_transition(net, "go", runs, 0, events)
    assert net.transition(0).condition.threshold == pytest.approx(0.8)
    assert net.transition(0).firing_probability == 1.0
    assert [e["event"] for e in events] == ["decay", "condition_update"]


def test_unconditioned_transition_is_reset(chain, runs, caplog):
    events = []
    net = apply_overrides(chain, LoopConfig(kappa=0.5, lambda_floor=0.6))
    with caplog.at_level(logging.WARNING, logger="composite_learning.sim.loop"):
        net = adapt_transition(net, "stop", runs, 2, events)
    assert net.transition(1).firing_probability == 1.0
    assert [e["event"] for e in events] == ["decay", "reset"]
    assert "no condition" in caplog.text


@pytest.fixture
def pendulum_demos():
    task = PendulumTask()
    net = load_skill(shipped_skill_path("pendulum"))
    generated = generate_corpus(task, net, 2, seed=3, noise=0.5, time_budget=0.2)
    first = generated[0]
    labeled = [LabeledDemonstration(first.trace, True, 0.9, {})] + generated[1:]
    return task, net, labeled


def test_loop_stops_when_the_budget_is_spent(pendulum_demos):
    task, net, demos = pendulum_demos
    config = LoopConfig(trial_budget=2, window=5, success_target=1.0, time_budget=0.2, sample_stride=5)
    report = composite_learning_loop(config, demos, net, task)
    assert report.trials == 2
    assert report.termination == BUDGET_EXHAUSTED
    assert [e["trial_id"] for e in report.evaluations] == ["trial-000", "trial-001"]
    assert sum(report.demo_weights.values()) == pytest.approx(1.0)
    assert report.demo_weights["demo-001"] == 0.0
    final = parse_skill_definition(report.final_net)
    assert [t.id for t in final.transitions] == [t.id for t in net.transitions]

    document = json.loads(report.to_json())
    assert document["config"]["trial_budget"] == 2
    assert {"success_rate_first_W", "true_success_rate_last_W", "model_sizes", "events"} <= set(document)


def test_loop_is_reproducible(pendulum_demos):
    task, net, demos = pendulum_demos
    config = LoopConfig(trial_budget=1, window=2, time_budget=0.1, sample_stride=5)
    first = composite_learning_loop(config, demos, net, task)
    second = composite_learning_loop(config, demos, net, task)
    assert first.to_json() == second.to_json()


def test_render_report():
    text = render_report(
        {
            "termination": "learned",
            "trials": 3,
            "success_rate_first_W": 0.5,
            "success_rate_last_W": 1.0,
            "evaluations": [{"trial_id": "trial-000", "verdict": "failure", "overall": 0.25, "problematic": ["t1"]}],
            "model_sizes": {"t1": {"n": 40, "m": 12}},
            "demo_weights": {"demo-000": 1.0},
        }
    )
    assert text.splitlines()[:2] == ["termination: learned", "trials: 3"]
    assert "  trial-000: failure overall=0.250 problematic=t1" in text
    assert "  t1: n=40 m=12" in text
    assert "  demo-000: 1.0000" in text


def test_render_report_tolerates_a_sparse_document():
    assert render_report({}).startswith("termination: ?")


def _scripted_evaluation(criteria, trace, net):
    condition = net.transition(net.transition_index("go")).condition
    if condition.threshold > 0.6:
        return TrialEvaluation(0.9, {"go": 0.9}, True, [], 0.5)
    return TrialEvaluation(0.1, {"go": 0.1}, False, ["go"], 0.5)


def _practice(config, demos, net, trial, physical_dim, evaluate):
    task = SimpleNamespace(physical_dim=physical_dim, control_dim=1)
    with patch("composite_learning.sim.loop.learn_criteria"), patch(
        "composite_learning.sim.loop.fit_policies", return_value=({}, {})
    ), patch("composite_learning.sim.loop.run_trial", return_value=trial), patch(
        "composite_learning.sim.loop.score_trial", side_effect=evaluate
    ):
        return composite_learning_loop(config, demos, net, task)


def test_adaptation_turns_failures_into_successes(chain, runs):
    fired, unscored = runs[0][0], runs[1][0]
    demos = [LabeledDemonstration(fired, True, 1.0, {}), LabeledDemonstration(unscored, False, 0.0, {})]
    config = LoopConfig(kappa=0.5, lambda_floor=0.3, window=4, success_target=0.75, trial_budget=20)
    report = _practice(config, demos, chain, fired, 2, _scripted_evaluation)

    assert report.termination == LEARNED
    assert report.trials == 5
    assert [e["verdict"] for e in report.evaluations] == ["failure"] * 2 + ["success"] * 3
    assert report.success_rate_first_w == 0.5
    assert report.success_rate_last_w == 0.75
    assert report.success_rate_last_w > report.success_rate_first_w
    assert [(e["trial"], e["event"]) for e in report.events] == [
        (0, "decay"),
        (1, "decay"),
        (1, "condition_update"),
    ]
    final = parse_skill_definition(report.final_net)
    assert final.transition(0).condition.threshold == pytest.approx(0.8)
    assert final.transition(0).firing_probability == 1.0


def _swing(demo_id, angles):
    n = len(angles)
    return Demonstration(
        demo_id,
        0.01,
        np.arange(n) * 0.01,
        np.asarray(angles)[:, None],
        np.zeros((n, 1)),
        ["go"] * n,
        {"last_fired": "go:0"},
    )


def test_successful_practice_down_weights_jerk_up_demonstrations(chain):
    t = np.linspace(0.0, 1.0, 101)
    swing = np.pi * t * np.sin(6.0 * np.pi * t)
    back_and_forth = [_swing("swing-0", swing), _swing("swing-1", 1.05 * swing)]
    jerk_up = [_swing("jerk-0", np.pi * t), _swing("jerk-1", 0.9 * np.pi * t)]
    demos = [LabeledDemonstration(d, True, 0.8, {}) for d in back_and_forth]
    demos += [LabeledDemonstration(d, True, 1.0, {}) for d in jerk_up]
    initial = demo_weights(demos)
    assert initial[2:].min() > initial[:2].max()

    def always_succeeds(criteria, trace, net):
        return TrialEvaluation(1.0, {"go": 1.0}, True, [], 0.5)

    config = LoopConfig(window=5, success_target=0.8, trial_budget=20)
    report = _practice(config, demos, chain, back_and_forth[0], 1, always_succeeds)

    assert report.termination == LEARNED
    assert report.trials == 5
    weights = report.demo_weights
    assert max(weights["jerk-0"], weights["jerk-1"]) <= min(weights["swing-0"], weights["swing-1"])
    assert sum(weights.values()) == pytest.approx(1.0)


@pytest.mark.slow
def test_nunchaku_runs_fire_only_on_held_conditions():
    task = make_task("nunchaku")
    net = load_skill(shipped_skill_path("nunchaku"))
    demos = generate_corpus(task, net, 3, seed=5, time_budget=4.5)
    policies, _ = fit_policies(net, [(d.trace, 1.0) for d in demos], task.physical_dim, task.control_dim)
    trials = run_trials(net, policies, task, trial_seeds(5, 50), time_budget=4.5)

    for trace in [d.trace for d in demos] + trials:
        assert trace.terminal in ("PF_success", "PF_fail")
        for tid in trace.last_fired:
            condition = net.transition(net.transition_index(tid)).condition
            state = trace.firing_state(tid)
            if condition is not None and state is not None:
                assert condition.holds(state), f"{trace.demo_id}: {tid} fired at {state}"
        state = trace.firing_state("t2")
        if state is not None:
            assert state[1] >= 2.4525
