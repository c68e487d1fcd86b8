import json

import pytest

from composite_learning import __version__
from composite_learning.cli import build_parser, resolve_config, run_command
from composite_learning.config import LoopConfig
from composite_learning.evaluation import read_labels
from composite_learning.gpr import load_model
from composite_learning.sim.demonstration import read_demonstration


def test_usage_errors_exit_with_status_2():
    with pytest.raises(SystemExit) as excinfo:
        run_command(["trial", "--unknown-flag"])
    assert excinfo.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        run_command(["--version"])
    assert excinfo.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_missing_report_file(tmp_path, capsys):
    assert run_command(["report", str(tmp_path / "missing.json")]) == 1
    assert "error: file not found" in capsys.readouterr().err


def test_report_rejects_non_json(tmp_path, capsys):
    path = tmp_path / "report.json"
    path.write_text("not json")
    assert run_command(["report", str(path)]) == 1
    assert "not a JSON report" in capsys.readouterr().err


def test_report_renders_a_learn_report(tmp_path, capsys):
    path = tmp_path / "report.json"
    path.write_text(json.dumps({"termination": "budget_exhausted", "trials": 2, "evaluations": []}))
    assert run_command(["report", str(path)]) == 0
    out = capsys.readouterr().out
    assert "termination: budget_exhausted" in out
    assert "trials: 2" in out


def test_flags_override_the_config_file(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("seed=3\nnoise=1.5\n")
    args = build_parser().parse_args(["demo", "--config", str(config), "--seed", "9"])
    resolved = resolve_config(args)
    assert resolved.seed == 9
    assert resolved.noise == 1.5


def test_bad_config_file_is_a_domain_error(tmp_path, capsys):
    config = tmp_path / "run.cfg"
    config.write_text("seed=3\ncolour=blue\n")
    assert run_command(["demo", "--config", str(config), "--out", str(tmp_path / "demos")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_unknown_task(tmp_path, capsys):
    assert run_command(["demo", "--task", "juggling", "--out", str(tmp_path)]) == 1
    assert "unknown task" in capsys.readouterr().err


@pytest.fixture
def demos_dir(tmp_path):
    out = tmp_path / "demos"
    code = run_command(["demo", "--count", "2", "--seed", "4", "--time-budget", "0.05", "--out", str(out)])
    assert code == 0
    return out


def test_demo_writes_logs_and_labels(capsys, demos_dir):
    assert sorted(p.name for p in demos_dir.iterdir()) == ["demo-000.csv", "demo-001.csv", "labels.txt"]
    assert (demos_dir / "labels.txt").read_text().startswith("# task=pendulum")
    assert sorted(read_labels(demos_dir / "labels.txt")) == ["demo-000", "demo-001"]
    assert read_demonstration(demos_dir / "demo-000.csv").metadata["seed"] == "4"
    assert "wrote 2 demonstrations" in capsys.readouterr().out


def test_learn_criteria_from_recorded_demos(demos_dir, tmp_path):
    out = tmp_path / "criteria.json"
    code = run_command(
        ["learn-criteria", "--demos", str(demos_dir), "--seed", "4", "--problem-threshold", "0.3", "--out", str(out)]
    )
    assert code == 0
    document = json.loads(out.read_text())
    assert document["transition_ids"][:2] == ["t0", "t1"]
    assert document["config"]["seed"] == 4
    assert document["config"]["problem_threshold"] == 0.3


def test_fit_needs_a_successful_demonstration(demos_dir, tmp_path, capsys):
    assert run_command(["fit", "--demos", str(demos_dir), "--out", str(tmp_path / "policies")]) == 1
    assert "no successful demonstration" in capsys.readouterr().err


def test_fit_snapshots_carry_the_producing_config(demos_dir, tmp_path):
    labels = tmp_path / "labels.txt"
    labels.write_text("demo-000 1 0.9\ndemo-001 0 0.0\n")
    config = tmp_path / "run.cfg"
    config.write_text("time_budget=0.05\ncond_ceiling=500\n")
    out = tmp_path / "policies"
    args = ["fit", "--demos", str(demos_dir), "--labels", str(labels), "--config", str(config)]
    code = run_command(args + ["--seed", "4", "--max-subset", "7", "--out", str(out)])
    assert code == 0
    snapshots = sorted(out.glob("policy-*.clgp"))
    assert snapshots
    for path in snapshots:
        _, metadata = load_model(path)
        assert metadata["transition"] == path.stem[len("policy-"):]
        assert metadata["config"] == LoopConfig(
            seed=4, time_budget=0.05, cond_ceiling=500.0, max_subset=7
        ).as_dict()


def test_trial_needs_a_policy_directory(tmp_path, capsys):
    assert run_command(["trial", "--policies", str(tmp_path / "nowhere")]) == 1
    assert "error: file not found" in capsys.readouterr().err
