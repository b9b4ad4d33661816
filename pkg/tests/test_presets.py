import json

import pytest

from anchorstream.config.presets import PRESETS, load_config_file, parse_assignment, resolve_config
from anchorstream.exceptions import ConfigError

# (mode, r, alpha, lambda, cap_target, cap_general)
GOLDEN = {
    "V1.1": ("naive", 16, 32.0, 0.0, 0, 0),
    "V2.1": ("er", 24, 48.0, 0.0, 400, 0),
    "V3.1": ("er", 24, 48.0, 0.0, 300, 300),
    "V4.5": ("ewc", 24, 48.0, 10.0, 0, 0),
    "V5.1": ("hybrid", 24, 48.0, 100.0, 300, 300),
}


@pytest.mark.parametrize("preset", sorted(GOLDEN))
def test_presets_match_golden_table(preset):
    cfg = resolve_config(preset)
    mode, rank, alpha, lam, cap_target, cap_general = GOLDEN[preset]
    assert cfg.preset == preset
    assert (cfg.train.mode, cfg.model.lora_rank, cfg.model.lora_alpha) == (mode, rank, alpha)
    assert (cfg.train.lambda_, cfg.train.cap_target, cfg.train.cap_general) == (lam, cap_target, cap_general)
    assert cfg.model.scaling == 2.0
    assert cfg.model.lora_targets == ("q", "v")


def test_shared_defaults():
    train = resolve_config("V1.1").train
    assert (train.lr, train.weight_decay, train.warmup_steps, train.epochs_per_segment) == (3e-4, 0.01, 10, 3)
    assert (train.batch_size, train.gamma, train.tau, train.hard_fraction) == (64, 0.5, 1.0, 0.6)
    assert train.grad_clip is None
    assert sorted(PRESETS) == sorted(GOLDEN)


def test_unknown_preset_lists_valid_ones():
    with pytest.raises(ConfigError, match="V1.1, V2.1, V3.1, V4.5, V5.1"):
        resolve_config("V9.9")


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        resolve_config("V1.1", {"train": {"lamda": 3}})


def test_out_of_range_value_is_rejected():
    with pytest.raises(ConfigError):
        resolve_config("V1.1", assignments=["train.lr=-1"])


def test_overrides_then_assignments():
    cfg = resolve_config("V5.1", {"train": {"lambda": 5.0, "gamma": 0.25}}, ["train.lambda=7", "seed=11"])
    assert cfg.train.lambda_ == 7.0
    assert cfg.train.gamma == 0.25
    assert cfg.seed == 11
    assert cfg.train.cap_target == 300


def test_field_name_and_alias_both_work():
    assert resolve_config("V4.5", {"train": {"lambda_": 3.0}}).train.lambda_ == 3.0
    assert resolve_config("V4.5", assignments=["train.lambda_=4"]).train.lambda_ == 4.0


def test_preset_name_cannot_be_overridden():
    assert resolve_config("V3.1", {"preset": "V1.1"}).preset == "V3.1"


def test_resolution_is_pure():
    resolve_config("V1.1", {"model": {"lora_rank": 4}})
    assert resolve_config("V1.1").model.lora_rank == 16


@pytest.mark.parametrize(
    "text, expected",
    [
        ("train.lambda=100", {"train": {"lambda": 100}}),
        ("seed=3", {"seed": 3}),
        ("out_dir=runs/x", {"out_dir": "runs/x"}),
        ('model.lora_targets=["q"]', {"model": {"lora_targets": ["q"]}}),
        ("train.grad_clip=null", {"train": {"grad_clip": None}}),
    ],
)
def test_parse_assignment(text, expected):
    assert parse_assignment(text) == expected


@pytest.mark.parametrize("text", ["novalue", "=3"])
def test_malformed_assignment(text):
    with pytest.raises(ConfigError):
        parse_assignment(text)


def test_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"train": {"epochs_per_segment": 1}}))
    assert resolve_config("V1.1", load_config_file(path)).train.epochs_per_segment == 1
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.json")
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config_file(path)
