import pytest

from composite_learning.config import (
    ConfigError,
    LoopConfig,
    format_config,
    load_config,
    parse_config,
)


def test_defaults():
    config = LoopConfig()
    assert config.task == "pendulum"
    assert config.noise == 2.0
    assert config.noise_ramp is True
    assert config.window == 10
    assert config.kappa is None


def test_parse_config():
    config = parse_config(
        """
        # pendulum practice
        seed = 11
        noise_ramp = no
        kappa = 0.8       # faster decay
        skill = none
        corpus = mixed
        """
    )
    assert config.seed == 11
    assert config.noise_ramp is False
    assert config.kappa == 0.8
    assert config.skill is None
    assert config.corpus == "mixed"
    assert config.trial_budget == LoopConfig().trial_budget


@pytest.mark.parametrize(
    "text, line",
    [
        ("seed=1\nspeed=2\n", 2),
        ("seed=1\n\nseed=2\n", 3),
        ("window=ten\n", 1),
        ("# header\nnoise_ramp=maybe\n", 2),
        ("trial_budget\n", 1),
    ],
)
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    assert excinfo.value.line == line


@pytest.mark.parametrize(
    "changes",
    [
        {"window": 0},
        {"success_target": 0.0},
        {"kappa": 1.0},
        {"lambda_floor": 0.0},
        {"max_subset": 500, "max_candidates": 400},
        {"reweight_rate": 1.5},
        {"time_budget": -1.0},
    ],
)
def test_invalid_values_are_rejected(changes):
    with pytest.raises(ConfigError):
        LoopConfig(**changes)


def test_format_then_parse_restores_the_config():
    config = LoopConfig(seed=3, kappa=0.75, noise=0.1, noise_ramp=False, skill="skills/custom.apn")
    text = format_config(config)
    assert "lambda_floor" not in text
    assert "noise_ramp=false" in text
    assert parse_config(text) == config


def test_overrides_skip_unset_values():
    config = LoopConfig().with_overrides({"seed": 11, "noise": None})
    assert config.seed == 11
    assert config.noise == LoopConfig().noise
    with pytest.raises(ConfigError):
        LoopConfig().with_overrides({"sead": 1})


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        LoopConfig.from_dict({"colour": "blue"})


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("task=nunchaku\ntrial_budget=5\n")
    config = load_config(path)
    assert config.task == "nunchaku"
    assert config.trial_budget == 5
