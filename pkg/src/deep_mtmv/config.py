"""Training configuration: parsing, validation and serialisation."""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError
from .mvclustering import SEPARATION_REDUCERS


@dataclass
class TrainConfig:
    dataset: str
    seed: int
    rounds: int = 2  # R
    alpha: float = 1.0
    base_cost: float = 0.1  # L_0
    split_exponent: int | None = None  # p_t override; default is the split depth
    separation_reduce: str = "max"
    lambda_scale: float = 0.5  # co-regularization lambda_i = scale * view share
    view_lambdas: float | list[float] = 1e-4  # weight-norm penalty per view
    learning_rate: float = 0.01
    batch_size: int = 16
    epochs_per_round: int = 80
    max_epochs: int = 300
    patience: int = 10
    min_delta: float = 1e-4
    d_max: int = 5
    cross_stitch: bool = False
    views: list[int] | None = None
    view_plans: list[list[dict]] | None = None

    def __post_init__(self):
        validate(self)

    def lambdas_for(self, m: int) -> list[float]:
        if isinstance(self.view_lambdas, (int, float)):
            return [float(self.view_lambdas)] * m
        if len(self.view_lambdas) != m:
            raise ConfigurationError(f"view_lambdas has {len(self.view_lambdas)} entries for {m} views",
                                     key="view_lambdas")
        return [float(x) for x in self.view_lambdas]

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


_NONNEG = ("alpha", "base_cost", "lambda_scale", "min_delta")
_POSITIVE_INT = ("batch_size", "d_max", "patience")
_NONNEG_INT = ("rounds", "epochs_per_round", "max_epochs")


def _number(cfg, key, integer=False):
    value = getattr(cfg, key)
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok or (not integer and not math.isfinite(value)):
        raise ConfigurationError(f"{key} must be {'an integer' if integer else 'a number'}, got {value!r}",
                                 key=key)
    return value


def validate(cfg: TrainConfig):
    if not isinstance(cfg.dataset, str) or not cfg.dataset:
        raise ConfigurationError("dataset must be a nonempty path", key="dataset")
    _number(cfg, "seed", integer=True)
    for key in _NONNEG:
        if _number(cfg, key) < 0:
            raise ConfigurationError(f"{key} must be nonnegative, got {getattr(cfg, key)}", key=key)
    for key in _NONNEG_INT:
        if _number(cfg, key, integer=True) < 0:
            raise ConfigurationError(f"{key} must be nonnegative, got {getattr(cfg, key)}", key=key)
    for key in _POSITIVE_INT:
        if _number(cfg, key, integer=True) < 1:
            raise ConfigurationError(f"{key} must be positive, got {getattr(cfg, key)}", key=key)
    if _number(cfg, "learning_rate") <= 0:
        raise ConfigurationError(f"learning_rate must be positive, got {cfg.learning_rate}", key="learning_rate")
    if cfg.split_exponent is not None and (_number(cfg, "split_exponent", integer=True) < 0):
        raise ConfigurationError("split_exponent must be nonnegative", key="split_exponent")
    if cfg.separation_reduce not in SEPARATION_REDUCERS:
        raise ConfigurationError(f"separation_reduce must be one of {SEPARATION_REDUCERS}",
                                 key="separation_reduce")
    lams = cfg.view_lambdas if isinstance(cfg.view_lambdas, list) else [cfg.view_lambdas]
    for lam in lams:
        if isinstance(lam, bool) or not isinstance(lam, (int, float)) or not math.isfinite(lam) or lam < 0:
            raise ConfigurationError(f"view_lambdas entries must be nonnegative numbers, got {lam!r}",
                                     key="view_lambdas")
    if not isinstance(cfg.cross_stitch, bool):
        raise ConfigurationError("cross_stitch must be true or false", key="cross_stitch")
    if cfg.views is not None:
        if not isinstance(cfg.views, list) or not cfg.views or \
                any(isinstance(v, bool) or not isinstance(v, int) or v < 0 for v in cfg.views):
            raise ConfigurationError("views must be a nonempty list of view indices", key="views")
    if cfg.view_plans is not None and not isinstance(cfg.view_plans, list):
        raise ConfigurationError("view_plans must be a list of layer plans", key="view_plans")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot, such as ``1e-4``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)


def load_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
REQUIRED = {f.name for f in dataclasses.fields(TrainConfig)
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING}


def config_from_dict(data: dict) -> TrainConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a mapping")
    unknown = sorted(set(data) - FIELDS)
    if unknown:
        raise ConfigurationError(f"unknown configuration key {unknown[0]!r}", key=unknown[0])
    missing = sorted(REQUIRED - set(data))
    if missing:
        raise ConfigurationError(f"missing required key {missing[0]!r}", key=missing[0])
    return TrainConfig(**data)


def parse_config(path) -> TrainConfig:
    """Read a YAML or JSON config file. Relative dataset paths resolve against the file."""
    path = Path(path)
    try:
        data = load_yaml(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}", key="config") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML/JSON: {exc}", key="config") from exc
    cfg = config_from_dict(data if data is not None else {})
    ds = Path(cfg.dataset)
    if not ds.is_absolute():
        cfg.dataset = str((path.parent / ds).resolve())
    return cfg


def serialize_config(cfg: TrainConfig, path) -> Path:
    path = Path(path)
    path.write_text(cfg.to_json())
    return path
