import json
import logging

import numpy as np
import pytest

from composite_learning.apn import parse_skill_definition
from composite_learning.config import LoopConfig
from composite_learning.evaluation import (
    FALLBACK_THRESHOLD,
    DemoLabel,
    EvaluationError,
    LabeledDemonstration,
    LabelFileError,
    TrialEvaluation,
    attach_labels,
    demo_weights,
    extract_features,
    format_label,
    learn_criteria,
    load_criteria,
    locate_problematic,
    parse_labels,
    read_labels,
    refine_criteria,
    save_criteria,
    score_trial,
    write_labels,
)
from composite_learning.sim.demonstration import IDLE, Demonstration


RAMP = """\
place A
place B
place Done
transition t0 lambda=1.0
transition t1 lambda=1.0
transition t2 lambda=1.0
arc A -> t0
arc t0 -> B
arc B -> t1
arc t1 -> B
arc B -> t2
arc t2 -> Done
condition t1 proj=1.0,0.0,0.0 op=le thresh=1.0
condition t2 proj=1.0,0.0,0.0 op=ge thresh=1.0
marking A 1
"""

TICKS = 50


def make_trace(demo_id, ramp_end, control=0.5, transitions=None):
    times = np.arange(TICKS) * 0.001
    states = np.column_stack([np.linspace(0.0, ramp_end, TICKS), np.zeros(TICKS), times])
    return Demonstration(
        demo_id=demo_id,
        tick=0.001,
        times=times,
        states=states,
        controls=np.full((TICKS, 1), control),
        transitions=transitions or ["t0"] + ["t1"] * (TICKS - 1),
    )


def success(demo_id, ramp_end, score):
    return LabeledDemonstration(make_trace(demo_id, ramp_end), True, score, {"t0": 1.0, "t1": 1.0})


def failure(demo_id, ramp_end):
    return LabeledDemonstration(make_trace(demo_id, ramp_end), False, 0.0, {"t0": 0.5, "t1": 0.0})


@pytest.fixture
def net():
    return parse_skill_definition(RAMP)


@pytest.fixture
def demos():
    return [success("demo-000", 1.0, 0.9), success("demo-001", 1.1, 0.8), failure("demo-002", 0.3), failure("demo-003", 0.2)]


@pytest.fixture
def criteria(demos, net):
    return learn_criteria(demos, net)


def test_transition_features(net):
    features = extract_features(make_trace("d", 1.0), net)
    assert list(features) == ["t0", "t1"]
    np.testing.assert_allclose(features["t1"], [0.049, 1.0, 0.5, 0.0245, 0.0])
    np.testing.assert_allclose(features["t0"], [0.001, 0.0, 0.5, 0.0005, 0.0])


def test_features_need_a_fired_transition(net):
    with pytest.raises(EvaluationError):
        extract_features(make_trace("d", 1.0, transitions=[IDLE] * TICKS), net)


def test_threshold_separates_the_labeled_outcomes(criteria):
    assert 0.0 < criteria.threshold < 0.8
    assert criteria.transition_ids == ["t0", "t1", "t2"]
    assert criteria.state_dim == 3
    assert sorted(criteria.per_transition) == ["t0", "t1"]


def test_trial_like_a_success_is_judged_successful(criteria, net):
    evaluation = score_trial(criteria, make_trace("trial", 1.05), net)
    assert evaluation.success
    assert evaluation.verdict == "success"
    assert evaluation.problematic == []


def test_trial_like_a_failure_blames_the_failed_transition(criteria, net):
    evaluation = score_trial(criteria, make_trace("trial", 0.25), net)
    assert not evaluation.success
    assert evaluation.problematic == ["t1"]
    assert evaluation.per_transition["t0"] == pytest.approx(0.75, abs=1e-3)
    assert set(evaluation.as_dict()) == {"overall", "per_transition", "verdict", "problematic"}


def test_empty_trial_scores_zero(criteria, net):
    empty = Demonstration("trial", 0.001, np.zeros(0), np.zeros((0, 3)), np.zeros((0, 1)), [])
    evaluation = score_trial(criteria, empty, net)
    assert evaluation.overall == 0.0
    assert evaluation.per_transition == {}
    assert not evaluation.success


def test_criteria_refuse_a_different_net(criteria):
    other = parse_skill_definition(RAMP.replace("t2", "t9"))
    with pytest.raises(EvaluationError):
        score_trial(criteria, make_trace("trial", 1.0), other)


def test_criteria_refuse_a_different_state_dimension(criteria, net):
    trace = make_trace("trial", 1.0)
    wide = Demonstration("trial", 0.001, trace.times, np.hstack([trace.states, trace.states]), trace.controls, trace.transitions)
    with pytest.raises(EvaluationError):
        score_trial(criteria, wide, net)


def test_learning_needs_two_demonstrations(demos, net):
    with pytest.raises(EvaluationError):
        learn_criteria(demos[:1], net)


def test_single_outcome_falls_back_to_the_default_threshold(demos, net, caplog):
    with caplog.at_level(logging.WARNING, logger="composite_learning.evaluation"):
        criteria = learn_criteria(demos[:2], net)
    assert criteria.threshold == FALLBACK_THRESHOLD
    assert "share one outcome" in caplog.text


def test_refine_appends_rows(criteria, net):
    refined = refine_criteria(criteria, [failure("demo-004", 0.4)], net)
    assert len(refined.rows) == 5
    assert refined.transition_ids == criteria.transition_ids


def test_locate_problematic_keeps_net_order():
    evaluation = TrialEvaluation(0.2, {"t0": 0.1, "t1": 0.9, "t2": 0.1}, False, [], 0.5)
    assert locate_problematic(evaluation) == ["t0", "t2"]
    assert locate_problematic(evaluation, 0.95) == ["t0", "t1", "t2"]


def test_demo_weights():
    weights = demo_weights([success("a", 1.0, 1.0), success("b", 1.0, 0.5), failure("c", 0.3)])
    np.testing.assert_allclose(weights, [2.0 / 3.0, 1.0 / 3.0, 0.0])
    with pytest.raises(EvaluationError):
        demo_weights([failure("c", 0.3)])
    with pytest.raises(EvaluationError):
        demo_weights([])


def test_scores_must_lie_in_the_unit_interval():
    with pytest.raises(EvaluationError):
        DemoLabel(True, 1.5)
    with pytest.raises(EvaluationError):
        DemoLabel(True, 0.5, {"t0": -0.1})


def test_scores_only_for_fired_transitions():
    with pytest.raises(EvaluationError):
        LabeledDemonstration(make_trace("d", 1.0), True, 1.0, {"t2": 1.0})


def test_label_file_round_trip(tmp_path, demos):
    path = write_labels(demos, tmp_path / "labels.txt")
    labels = read_labels(path)
    assert list(labels) == ["demo-000", "demo-001", "demo-002", "demo-003"]
    assert labels["demo-002"] == demos[2].label
    assert format_label("demo-000", demos[0].label) == "demo-000 1 0.9 t0:1.0 t1:1.0"


def test_label_comments_are_ignored():
    labels = parse_labels("# seed=7\n\ndemo-000 1 0.5 t0:1.0  # mentor\n")
    assert labels == {"demo-000": DemoLabel(True, 0.5, {"t0": 1.0})}


@pytest.mark.parametrize(
    "text, line",
    [
        ("demo-000 1 0.5\ndemo-001 yes 0.5\n", 2),
        ("demo-000 1 0.5\n# note\ndemo-000 0 0.0\n", 3),
        ("demo-000 1 high\n", 1),
        ("demo-000 1 0.5 t0\n", 1),
        ("demo-000 1 0.5 t0:2.0\n", 1),
        ("demo-000 1\n", 1),
    ],
)
def test_label_errors_carry_line_numbers(text, line):
    with pytest.raises(LabelFileError) as excinfo:
        parse_labels(text)
    assert excinfo.value.line == line


def test_attach_labels(demos):
    labels = {d.trace.demo_id: d.label for d in demos}
    attached = attach_labels([d.trace for d in demos], labels)
    assert [a.overall_score for a in attached] == [0.9, 0.8, 0.0, 0.0]
    with pytest.raises(EvaluationError):
        attach_labels([make_trace("stranger", 1.0)], labels)


def test_saved_criteria_reload_identically(tmp_path, criteria, net):
    config = LoopConfig(seed=13, problem_threshold=0.35)
    path = save_criteria(criteria, tmp_path / "criteria.json", config.as_dict())
    assert json.loads(path.read_text())["config"] == config.as_dict()
    loaded = load_criteria(path)
    assert loaded.threshold == pytest.approx(criteria.threshold)
    trial = make_trace("trial", 0.9)
    assert score_trial(loaded, trial, net).overall == pytest.approx(score_trial(criteria, trial, net).overall)


def test_criteria_file_version_is_checked(tmp_path, criteria):
    path = save_criteria(criteria, tmp_path / "criteria.json")
    document = json.loads(path.read_text())
    document["version"] = 99
    path.write_text(json.dumps(document))
    with pytest.raises(EvaluationError):
        load_criteria(path)
    path.write_text(json.dumps({"version": 1}))
    with pytest.raises(EvaluationError):
        load_criteria(path)
