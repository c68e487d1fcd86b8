import numpy as np
import pytest

from composite_learning.sim.demonstration import (
    IDLE,
    Demonstration,
    DemonstrationLogError,
    decode_firings,
    encode_firings,
    format_demonstration,
    parse_demonstration,
    read_demonstration,
    write_demonstration,
)


@pytest.fixture
def trace():
    times = np.arange(5) * 0.001
    states = np.column_stack([np.linspace(0.1, 0.5, 5), np.full(5, 1.0 / 3.0), times])
    controls = np.array([[0.0], [0.25], [0.5], [-0.125], [1e-17]])
    return Demonstration(
        demo_id="demo-007",
        tick=0.001,
        times=times,
        states=states,
        controls=controls,
        transitions=[IDLE, "t0", "t1", "t1", "t2"],
        metadata={"success": "true", "score": "0.75", "last_fired": "t0:1;t1:3;t2:4", "terminal": "PF_success"},
    )


def test_firing_records_are_ordered_by_tick():
    assert encode_firings({"t2": 40, "t0": 0, "t1": 12}) == "t0:0;t1:12;t2:40"
    assert decode_firings("t0:0;t1:12") == {"t0": 0, "t1": 12}
    assert decode_firings("") == {}
    with pytest.raises(DemonstrationLogError):
        decode_firings("t0:soon")


def test_outcome_properties(trace):
    assert trace.success is True
    assert trace.score == 0.75
    assert trace.terminal == "PF_success"
    assert trace.state_dim == 3
    assert trace.control_dim == 1
    assert len(trace) == 5


def test_fired_transitions_skip_idle_records(trace):
    assert trace.fired_transitions() == ["t0", "t1", "t2"]
    np.testing.assert_array_equal(trace.segment("t1"), [2, 3])
    assert trace.segment("t9").size == 0


def test_firing_state_uses_the_last_recorded_firing(trace):
    np.testing.assert_array_equal(trace.firing_state("t1"), trace.states[3])
    assert trace.firing_state("t5") is None


def test_firing_after_the_last_record_has_no_state(trace):
    late = Demonstration(
        trace.demo_id, trace.tick, trace.times, trace.states, trace.controls, trace.transitions,
        {"last_fired": "t2:5"},
    )
    assert late.firing_state("t2") is None


def test_record_counts_must_agree(trace):
    with pytest.raises(DemonstrationLogError):
        Demonstration("x", 0.001, trace.times, trace.states[:4], trace.controls, trace.transitions)


def test_times_must_advance_one_tick_per_record(trace):
    times = trace.times.copy()
    times[3] += 0.0005
    with pytest.raises(DemonstrationLogError):
        Demonstration("x", 0.001, times, trace.states, trace.controls, trace.transitions)


def test_log_layout(trace):
    lines = format_demonstration(trace).splitlines()
    assert lines[0] == "# demo_id=demo-007"
    assert lines[1] == "# tick=0.001"
    assert lines[2] == "# last_fired=t0:1;t1:3;t2:4"
    assert lines[6] == "t,x0,x1,x2,u0,transition"
    assert lines[7].endswith(",-")


def test_write_then_read_is_exact(tmp_path, trace):
    path = write_demonstration(trace, tmp_path / "nested" / "demo-007.csv")
    loaded = read_demonstration(path)
    assert loaded.demo_id == trace.demo_id
    assert loaded.tick == trace.tick
    assert loaded.metadata == trace.metadata
    assert loaded.transitions == trace.transitions
    np.testing.assert_array_equal(loaded.states, trace.states)
    np.testing.assert_array_equal(loaded.controls, trace.controls)


def test_empty_trace_keeps_its_dimensions():
    empty = Demonstration("e", 0.001, np.zeros(0), np.zeros((0, 5)), np.zeros((0, 2)), [])
    loaded = parse_demonstration(format_demonstration(empty))
    assert loaded.states.shape == (0, 5)
    assert loaded.controls.shape == (0, 2)


@pytest.mark.parametrize(
    "mutate, line",
    [
        (lambda text: text.replace("0.25,t0", "0.25,t0,extra"), 9),
        (lambda text: text.replace("0.25,t0", "zero,t0"), 9),
        (lambda text: text.replace("u0,transition", "u0,label"), 7),
    ],
)
def test_parse_errors_carry_line_numbers(trace, mutate, line):
    with pytest.raises(DemonstrationLogError) as excinfo:
        parse_demonstration(mutate(format_demonstration(trace)))
    assert excinfo.value.line == line


def test_missing_tick_metadata(trace):
    text = format_demonstration(trace).replace("# tick=0.001\n", "")
    with pytest.raises(DemonstrationLogError):
        parse_demonstration(text)
