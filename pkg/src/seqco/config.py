"""Experiment configuration: one nested, human-readable JSON file per run.

Every run archives its resolved configuration next to its log.  The seed is
mandatory; nothing falls back to wall-clock randomness.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .corpus import CorpusConfig
from .decoding import DecodeConfig
from .errors import ConfigError
from .objective import SeqCoConfig
from .optim import ScheduleConfig
from .transformer import ModelConfig


@dataclass
class GenerationConfig:
    """Training-time greedy generation of the model summary."""

    max_len: int | None = None  # resolved to the corpus summary cap
    min_len: int = 2
    block_trigrams: bool = False

    def resolved_max_len(self, sum_cap: int) -> int:
        return self.max_len if self.max_len is not None else sum_cap - 2


@dataclass
class ExperimentConfig:
    model: ModelConfig
    corpus: CorpusConfig
    seqco: SeqCoConfig
    schedule: ScheduleConfig
    decode: DecodeConfig
    seed: int
    train_gen: GenerationConfig = field(default_factory=GenerationConfig)
    batch_size: int = 16
    eval_interval: int = 250
    label_smoothing: float = 0.1
    grad_clip: float | None = 1.0
    protocol: str = "full_f1"
    out_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_interval < 1:
            raise ConfigError(f"eval_interval must be >= 1, got {self.eval_interval}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.protocol not in ("full_f1", "limited_recall"):
            raise ConfigError(f"protocol must be 'full_f1' or 'limited_recall', got {self.protocol!r}")
        if self.model.vocab_size != self.corpus.vocab_size:
            raise ConfigError(
                f"model vocab_size {self.model.vocab_size} != corpus vocab_size {self.corpus.vocab_size}"
            )
        if self.corpus.doc_cap > self.model.max_positions:
            raise ConfigError("corpus doc_cap exceeds the model's max_positions")
        if self.decode.max_len + 2 > self.model.max_positions:
            raise ConfigError("decode max_len does not fit the model's max_positions")
        gen_max = self.train_gen.resolved_max_len(self.corpus.sum_cap)
        if gen_max + 2 > self.model.max_positions or gen_max <= self.train_gen.min_len:
            raise ConfigError("training-time generation lengths are inconsistent with the model")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("experiment config must be a JSON object")
        if "seed" not in raw:
            raise ConfigError("config requires an explicit seed")
        data = dict(raw)
        try:
            sub = {
                "model": _build(ModelConfig, data.pop("model", None), "model"),
                "corpus": _build(CorpusConfig, data.pop("corpus", None), "corpus"),
                "seqco": _build(SeqCoConfig, data.pop("seqco", None), "seqco"),
                "schedule": _build(ScheduleConfig, data.pop("schedule", None), "schedule"),
                "decode": _build(DecodeConfig, data.pop("decode", None), "decode"),
                "train_gen": _build(GenerationConfig, data.pop("train_gen", None), "train_gen"),
            }
            return cls(**sub, **data)
        except TypeError as err:
            raise ConfigError(f"bad experiment config: {err}") from err


def _build(cls, raw, section: str):
    if raw is None:
        if section == "model":
            raise ConfigError("config requires a 'model' section")
        if section == "corpus":
            raw = {}
        elif section in ("seqco", "train_gen"):
            raw = {}
        elif section == "schedule":
            raise ConfigError("config requires a 'schedule' section")
        elif section == "decode":
            raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    return cls(**coerced)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return ExperimentConfig.from_dict(raw)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
