"""Experiment configuration: a sectioned key/value (INI) file.

Every field has a default, so an empty file describes the synthetic
benchmark run. See ``configs/`` in the repository for annotated examples.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .dataset import WUSTL_IIOT, SchemaProfile

PROFILES = {"wustl-iiot": WUSTL_IIOT}
TRUST_MODES = ("trusted", "untrusted")
ABLATIONS = ("none", "normal", "regular", "attack")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


# field name -> INI section
_SECTIONS = {
    "source": "dataset", "csv_path": "dataset", "profile": "dataset",
    "label_column": "dataset", "feature_columns": "dataset", "drop_columns": "dataset",
    "subsample": "dataset", "n_normal": "dataset", "n_attack": "dataset",
    "n_features": "dataset", "displacement": "dataset",
    "n_units": "experiment", "train_ratio": "experiment", "trust_mode": "experiment",
    "ablation": "experiment", "seed": "experiment", "output_dir": "experiment",
    "code_size": "autoencoder", "epochs": "autoencoder", "learning_rate": "autoencoder",
    "dropout_rate": "autoencoder", "batch_size": "autoencoder", "adam_beta1": "autoencoder",
    "adam_beta2": "autoencoder", "adam_epsilon": "autoencoder",
    "class_weight_values": "adaboost", "rounds": "adaboost", "max_depth": "adaboost",
    "valid_ratio": "adaboost", "mcc_slack": "adaboost",
    "include_class_feature": "federation",
}


@dataclass
class ExperimentConfig:
    # dataset
    source: str = "synthetic"
    csv_path: str = ""
    profile: str = ""
    label_column: str = "label"
    feature_columns: tuple[str, ...] = ()
    drop_columns: tuple[str, ...] = ()
    subsample: int = 0
    n_normal: int = 5000
    n_attack: int = 500
    n_features: int = 40
    displacement: float = 4.0
    # experiment
    n_units: int = 3
    train_ratio: float = 0.8
    trust_mode: str = "untrusted"
    ablation: str = "none"
    seed: int = 0
    output_dir: str = "runs/default"
    # autoencoder
    code_size: int = 25
    epochs: int = 100
    learning_rate: float = 0.01
    dropout_rate: float = 0.05
    batch_size: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # adaboost
    class_weight_values: tuple[float, ...] = (1.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    rounds: int = 100
    max_depth: int = 3
    valid_ratio: float = 0.2
    mcc_slack: float = 0.05
    # federation
    include_class_feature: bool = False

    def problems(self) -> list[str]:
        p = []

        def need(cond, name, msg):
            if not cond:
                p.append(f"{_SECTIONS[name]}.{name}: {msg}")

        need(self.source in ("synthetic", "csv"), "source", "must be 'synthetic' or 'csv'")
        if self.source == "csv":
            need(bool(self.csv_path), "csv_path", "required when source = csv")
            need(not self.csv_path or Path(self.csv_path).is_file(), "csv_path",
                 f"file not found: {self.csv_path}")
        need(self.profile in ("",) + tuple(PROFILES), "profile",
             f"unknown profile; choose from {sorted(PROFILES)}")
        need(self.subsample >= 0, "subsample", "must be >= 0 (0 keeps every record)")
        need(self.n_normal >= 1, "n_normal", "must be >= 1")
        need(self.n_attack >= 0, "n_attack", "must be >= 0")
        need(self.n_features >= 2, "n_features", "must be >= 2")
        need(self.displacement > 0, "displacement", "must be positive")
        need(self.n_units >= 1, "n_units", "must be >= 1")
        need(0 < self.train_ratio < 1, "train_ratio", "must be in (0, 1)")
        need(self.trust_mode in TRUST_MODES, "trust_mode", f"must be one of {TRUST_MODES}")
        need(self.ablation in ABLATIONS, "ablation", f"must be one of {ABLATIONS}")
        need(bool(self.output_dir), "output_dir", "must not be empty")
        need(self.code_size >= 2, "code_size", "must be >= 2")
        if self.source == "synthetic":
            need(self.code_size < self.n_features, "code_size", "must be smaller than n_features")
        need(self.epochs >= 1, "epochs", "must be >= 1")
        need(self.learning_rate > 0, "learning_rate", "must be positive")
        need(0 <= self.dropout_rate < 1, "dropout_rate", "must be in [0, 1)")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(0 <= self.adam_beta1 < 1, "adam_beta1", "must be in [0, 1)")
        need(0 <= self.adam_beta2 < 1, "adam_beta2", "must be in [0, 1)")
        need(self.adam_epsilon > 0, "adam_epsilon", "must be positive")
        need(len(self.class_weight_values) > 0, "class_weight_values", "must not be empty")
        need(all(v > 0 for v in self.class_weight_values), "class_weight_values",
             "weights must be positive")
        need(self.rounds >= 1, "rounds", "must be >= 1")
        need(self.max_depth >= 1, "max_depth", "must be >= 1")
        need(0 < self.valid_ratio < 1, "valid_ratio", "must be in (0, 1)")
        need(self.mcc_slack >= 0, "mcc_slack", "must be >= 0")
        return p

    def validate(self) -> "ExperimentConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def schema(self) -> SchemaProfile:
        if self.profile:
            return PROFILES[self.profile]
        return SchemaProfile(self.label_column, self.feature_columns, self.drop_columns)

    @property
    def class_weight_grid(self) -> tuple[tuple[float, float], ...]:
        return tuple((a, b) for a in self.class_weight_values for b in self.class_weight_values)

    @property
    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(self.epochs, self.learning_rate, self.dropout_rate, self.batch_size,
                              self.adam_beta1, self.adam_beta2, self.adam_epsilon, self.seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_ini(self) -> str:
        """Normalized text form; parsing it gives back an equal config."""
        sections: dict[str, list[str]] = {}
        for f in dataclasses.fields(self):
            sections.setdefault(_SECTIONS[f.name], []).append(
                f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(f"[{name}]\n" + "\n".join(lines) + "\n"
                         for name, lines in sections.items())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(f: dataclasses.Field, raw: str):
    default = f.default
    raw = raw.strip()
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return tuple(float(s) for s in items) if f.name == "class_weight_values" else tuple(items)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        value = float(raw)
        if not np.isfinite(value):
            raise ValueError(f"not a finite number: {raw!r}")
        return value
    return raw


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values, problems = {}, []
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in fields:
                problems.append(f"{section}.{key}: unknown setting")
                continue
            if _SECTIONS[key] != section:
                problems.append(f"{section}.{key}: belongs in section [{_SECTIONS[key]}]")
                continue
            try:
                values[key] = _parse(fields[key], raw)
            except ValueError as exc:
                problems.append(f"{section}.{key}: {exc}")
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    return parse_config(path.read_text(), str(path))
