"""Experiment configuration: YAML file + dotted-key overrides, hashed for provenance."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .training import ModelConfig, TrainConfig

OUTPUT_ROOT_ENV = "NRI_TRANSPORT_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "synthetic"                  # synthetic | taxi | speeds
    paths: dict = field(default_factory=dict)
    P: int = 48
    Q: int = 12
    stride: int = 60
    splits: tuple = (0.8, 0.1, 0.1)
    year: int | None = None
    zones: list | None = None
    trip_columns: dict = field(default_factory=dict)
    dtw_profile: str = "daily"
    dtw_quantile: float = 0.1
    distance_threshold_km: float | None = None
    target_degree: float = 8.0
    synthetic: dict = field(default_factory=dict)


@dataclass
class ModelBlock(ModelConfig):
    adjacency: str = "full"       # fixed mode: empty | full | local | dtw | true | <edge-list path>
    prior: str = "uniform"        # nri mode: uniform | local | dtw | true | <edge-list path>
    p_no_edge: float = 0.9
    prior_confidence: float = 0.9


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelBlock = field(default_factory=ModelBlock)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/experiment"
    seed: int = 0
    overrides: list = field(default_factory=list)

    def to_dict(self, with_overrides=True) -> dict:
        d = asdict(self)
        d["dataset"]["splits"] = list(d["dataset"]["splits"])
        if not with_overrides:
            d.pop("overrides")
        return d

    def config_hash(self) -> str:
        """Digest of every effective setting (override bookkeeping excluded)."""
        blob = json.dumps(self.to_dict(with_overrides=False), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def output_path(self) -> Path:
        out = Path(self.output_dir)
        if not out.is_absolute():
            out = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out
        return out

    def dump(self, path, header: dict | None = None) -> None:
        lines = "".join(f"# {k}={v}\n" for k, v in (header or {}).items())
        Path(path).write_text(lines + yaml.safe_dump(self.to_dict(), sort_keys=False))


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def _parse_value(text: str):
    return yaml.safe_load(text)


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        node = raw
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = _parse_value(value)
    return raw


def from_dict(raw: dict, overrides=None) -> ExperimentConfig:
    raw = apply_overrides(raw or {}, overrides)
    raw.pop("overrides", None)
    top = {k: v for k, v in raw.items() if k not in ("dataset", "model", "train")}
    seed = top.get("seed", 0)
    train_raw = dict(raw.get("train") or {})
    train_raw.setdefault("seed", seed)
    cfg = _build(ExperimentConfig, {
        **top,
        "dataset": _build(DatasetConfig, dict(raw.get("dataset") or {}), "dataset"),
        "model": _build(ModelBlock, dict(raw.get("model") or {}), "model"),
        "train": _build(TrainConfig, train_raw, "train"),
    }, "config")
    cfg.dataset.splits = tuple(cfg.dataset.splits)
    # YAML reads a bare `true` as a boolean; these keys name graphs
    for key in ("adjacency", "prior"):
        value = getattr(cfg.model, key)
        if isinstance(value, bool):
            setattr(cfg.model, key, str(value).lower())
    cfg.overrides = list(overrides or [])
    validate(cfg)
    return cfg


def load_config(path, overrides=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    cfg = from_dict(raw, overrides)
    base = path.parent
    cfg.dataset.paths = {k: str(Path(v) if Path(v).is_absolute() else base / v)
                         for k, v in cfg.dataset.paths.items()}
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    d, m = cfg.dataset, cfg.model
    if d.kind not in ("synthetic", "taxi", "speeds"):
        raise ConfigError(f"dataset.kind must be synthetic, taxi or speeds, got {d.kind!r}")
    if d.P < 1 or d.Q < 1 or d.stride < 1:
        raise ConfigError("dataset.P, dataset.Q and dataset.stride must be positive")
    if m.mode not in ("nri", "fixed"):
        raise ConfigError(f"model.mode must be nri or fixed, got {m.mode!r}")
    if m.n_edge_types < 2:
        raise ConfigError("model.n_edge_types must be at least 2")
    if m.sigma <= 0 or m.tau <= 0 or m.hidden < 1:
        raise ConfigError("model.sigma, model.tau and model.hidden must be positive")
