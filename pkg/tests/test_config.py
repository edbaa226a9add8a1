import dataclasses
import json

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from deep_mtmv.config import TrainConfig, config_from_dict, parse_config, serialize_config
from deep_mtmv.errors import ConfigurationError

DEFAULTS = dict(rounds=2, alpha=1.0, base_cost=0.1, split_exponent=None, separation_reduce="max",
                lambda_scale=0.5, view_lambdas=1e-4, learning_rate=0.01, batch_size=16, epochs_per_round=80,
                max_epochs=300, patience=10, min_delta=1e-4, d_max=5, cross_stitch=False, views=None,
                view_plans=None)


def test_minimal_config_gets_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text("dataset: data\nseed: 3\n")
    cfg = parse_config(tmp_path / "c.yaml")
    assert cfg.seed == 3
    assert {k: getattr(cfg, k) for k in DEFAULTS} == DEFAULTS


def test_relative_dataset_resolves_against_config_file(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "c.yaml").write_text("dataset: ../data\nseed: 0\n")
    assert parse_config(tmp_path / "sub" / "c.yaml").dataset == str((tmp_path / "data").resolve())
    (tmp_path / "abs.yaml").write_text(f"dataset: {tmp_path / 'x'}\nseed: 0\n")
    assert parse_config(tmp_path / "abs.yaml").dataset == str(tmp_path / "x")


def test_json_is_accepted(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"dataset": "/d", "seed": 1, "rounds": 0}))
    assert parse_config(tmp_path / "c.json").rounds == 0


@pytest.mark.parametrize("key,value", [
    ("alpha", -1.0), ("base_cost", -0.5), ("rounds", -1), ("rounds", 1.5), ("learning_rate", 0.0),
    ("batch_size", 0), ("d_max", 0), ("seed", "x"), ("separation_reduce", "median"), ("view_lambdas", [-1.0]),
    ("split_exponent", -2), ("views", []), ("cross_stitch", "yes"), ("alpha", float("nan")), ("patience", True),
])
def test_invalid_value_names_key(key, value):
    with pytest.raises(ConfigurationError, match=key) as info:
        config_from_dict({"dataset": "d", "seed": 0, key: value})
    assert info.value.key == key


def test_unknown_and_missing_keys():
    with pytest.raises(ConfigurationError, match="lr") as info:
        config_from_dict({"dataset": "d", "seed": 0, "lr": 0.1})
    assert info.value.key == "lr"
    with pytest.raises(ConfigurationError, match="seed"):
        config_from_dict({"dataset": "d"})


@pytest.mark.parametrize("text", ["[1, 2]", "dataset: [unclosed", ""])
def test_malformed_files(tmp_path, text):
    (tmp_path / "c.yaml").write_text(text)
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "c.yaml")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "absent.yaml")


def test_lambdas_for():
    assert TrainConfig(dataset="d", seed=0, view_lambdas=0.5).lambdas_for(3) == [0.5] * 3
    with pytest.raises(ConfigurationError):
        TrainConfig(dataset="d", seed=0, view_lambdas=[0.1, 0.2]).lambdas_for(3)


finite = st.floats(0, 10, allow_nan=False)
configs = st.builds(
    TrainConfig,
    dataset=st.just("/data/set"), seed=st.integers(0, 2**31 - 1), rounds=st.integers(0, 5), alpha=finite,
    base_cost=finite, split_exponent=st.none() | st.integers(0, 4), separation_reduce=st.sampled_from(["max", "mean"]),
    lambda_scale=finite, view_lambdas=finite | st.lists(finite, min_size=1, max_size=3),
    learning_rate=st.floats(1e-6, 1.0), batch_size=st.integers(1, 64), epochs_per_round=st.integers(0, 100),
    max_epochs=st.integers(0, 500), patience=st.integers(1, 20), min_delta=finite, d_max=st.integers(1, 8),
    cross_stitch=st.booleans(), views=st.none() | st.lists(st.integers(0, 4), min_size=1, max_size=3),
)


@given(configs)
@settings(max_examples=50, deadline=None)
def test_serialize_parse_round_trip(tmp_path_factory, cfg):
    path = serialize_config(cfg, tmp_path_factory.mktemp("cfg") / "c.json")
    assert parse_config(path) == cfg
    assert config_from_dict(yaml.safe_load(yaml.safe_dump(dataclasses.asdict(cfg)))) == cfg


def test_exponent_floats_without_dot(tmp_path):
    (tmp_path / "c.yaml").write_text("dataset: d\nseed: 0\nview_lambdas: 1e-4\nlearning_rate: 5E-3\n")
    cfg = parse_config(tmp_path / "c.yaml")
    assert cfg.view_lambdas == 1e-4 and cfg.learning_rate == 5e-3
