"""Run configuration: nested keys, YAML file, dotted-path overrides.

Defaults follow the reference hyperparameters (embedding dim 384, 4 alignment
heads, hidden size 384, 5 preferences, learning rate 0.001, batch 128, dropout
0.5, sequence length 50). Everything is overridable from the config file and
again from ``--set key=value`` flags, which sweeps rely on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict, is_dataclass, fields
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class CorpusConfig:
    input_path: str = ""
    input_format: str = "tsv"  # tsv | jsonl
    min_interactions: int = 5


@dataclass
class EncoderConfig:
    name: str = "hash"  # hash | sentence-bert | remote
    dim: int = 384
    seed: int = 0
    model_name: str = ""


@dataclass
class PreferencesConfig:
    m: int = 5
    llm: str = "mock"
    rate_limit: float = 1.0
    max_retries: int = 2


@dataclass
class SequenceConfig:
    n: int = 50


@dataclass
class BackboneConfig:
    variant: str = "self_attention"  # self_attention | gated_recurrent
    blocks: int = 2
    heads: int = 1


@dataclass
class AlignmentConfig:
    enabled: bool = True
    heads: int = 4
    d_k: int = 384


@dataclass
class TrainerConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    dropout: float = 0.5
    freeze_item_embeddings: bool = False


@dataclass
class EvaluatorConfig:
    ks: list[int] = field(default_factory=lambda: [5, 10])
    num_negatives: int = 100
    per_user_csv: bool = False


@dataclass
class ExplainConfig:
    limit: int = 20


@dataclass
class SweepConfig:
    parameter: str = "preferences.m"
    values: list = field(default_factory=lambda: [1, 3, 5, 10, 15])
    split: str = "test"


@dataclass
class RunConfig:
    workdir: str = "runs/default"
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    preferences: PreferencesConfig = field(default_factory=PreferencesConfig)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.encoder.dim < 1:
            raise ConfigError("encoder.dim must be positive")
        if self.sequence.n < 1:
            raise ConfigError("sequence.n must be positive")
        if self.preferences.m < 1:
            raise ConfigError("preferences.m must be positive")
        if self.alignment.heads < 1 or self.alignment.d_k < 1:
            raise ConfigError("alignment.heads and alignment.d_k must be positive")
        if not 0.0 <= self.trainer.dropout < 1.0:
            raise ConfigError("trainer.dropout must be in [0, 1)")
        if self.trainer.learning_rate < 0:
            raise ConfigError("trainer.learning_rate must be nonnegative")
        if self.corpus.input_format not in ("tsv", "jsonl"):
            raise ConfigError("corpus.input_format must be tsv or jsonl")
        if self.backbone.variant not in ("self_attention", "gated_recurrent"):
            raise ConfigError("backbone.variant must be self_attention or gated_recurrent")


def _apply(obj, data: dict, prefix: str = "") -> None:
    valid = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            _apply(current, value, prefix=f"{prefix}{key}.")
        elif is_dataclass(current):
            raise ConfigError(f"config key {prefix + key!r} needs a mapping")
        else:
            setattr(obj, key, value)


def _apply_dotted(config: RunConfig, dotted: str, raw_value: str) -> None:
    value = yaml.safe_load(raw_value)
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        if not hasattr(node, part):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = getattr(node, part)
    leaf = parts[-1]
    if not is_dataclass(node) or not hasattr(node, leaf):
        raise ConfigError(f"unknown config key {dotted!r}")
    if is_dataclass(getattr(node, leaf)):
        raise ConfigError(f"config key {dotted!r} is a section, not a value")
    setattr(node, leaf, value)


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Defaults <- YAML file <- --set overrides <- --seed."""
    config = RunConfig()
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        _apply(config, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        dotted, raw_value = item.split("=", 1)
        _apply_dotted(config, dotted.strip(), raw_value)
    if seed is not None:
        config.seed = seed
    config.validate()
    return config


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha1(canonical.encode("utf-8")).hexdigest()
