"""Pipeline configuration: one TOML file plus command-line overrides.

Example::

    seed = 0
    format = "json"

    [paths]
    model_dir = "model"
    report_dir = "reports"

    [extraction]
    max_len = 200000

    [vocab]
    threshold = 0.75

    [skipgram]
    dim = 200
    window = 5

    [classifier]
    hidden = 128
    epochs = 6

    [localization]
    k = 200
    n = 9
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .errors import ConfigError


@dataclass
class PathsConfig:
    input_dir: str = ""
    model_dir: str = ""
    report_dir: str = "reports"


@dataclass
class ExtractionSection:
    max_len: int = 200_000
    memo_cap: int = 50_000


@dataclass
class VocabSection:
    threshold: float = 0.75
    rule: str = "all"


@dataclass
class SkipGramSection:
    dim: int = 200
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    batch: int = 512


@dataclass
class ClassifierSection:
    hidden: int = 128
    epochs: int = 6
    batch: int = 16
    lr: float = 1e-3
    clip_norm: float = 5.0
    finetune_embedding: bool = False


@dataclass
class LocalizationSection:
    k: int = 200
    n: int = 9


@dataclass
class CorpusSection:
    malicious: int = 1000
    benign: int = 1000
    min_methods: int = 20
    max_methods: int = 60
    planted: int = 2
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class PipelineConfig:
    seed: int = 0
    format: str = "json"
    paths: PathsConfig = field(default_factory=PathsConfig)
    extraction: ExtractionSection = field(default_factory=ExtractionSection)
    vocab: VocabSection = field(default_factory=VocabSection)
    skipgram: SkipGramSection = field(default_factory=SkipGramSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    localization: LocalizationSection = field(default_factory=LocalizationSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _apply(obj, values: dict, where: str) -> None:
    for key, value in values.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key {where}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key} must be a table")
            _apply(current, value, f"{where}{key}.")
            continue
        if isinstance(current, tuple):
            value = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}{key} must be a boolean")
        elif isinstance(current, (int, float)) and not isinstance(value, (int, float)):
            raise ConfigError(f"{where}{key} must be a number")
        elif isinstance(current, float):
            value = float(value)
        setattr(obj, key, value)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the TOML file (if any), then ``overrides`` (nested dict)."""
    cfg = PipelineConfig()
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        _apply(cfg, data, "")
    if overrides:
        _apply(cfg, overrides, "")
    if cfg.format not in ("json", "text"):
        raise ConfigError(f"format must be json or text, got {cfg.format!r}")
    return cfg
