"""One JSON file configures a full run: world, split, encoder, training and evaluation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .encoder import EncoderConfig
from .models import TrainConfig
from .synthgen import WorldSpec


@dataclass
class SplitConfig:
    fractions: tuple = (0.8, 0.1, 0.1)
    seed: int = 7

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions) or abs(sum(self.fractions) - 1) > 1e-9:
            raise ValueError("split fractions must be three non-negative numbers summing to 1")


@dataclass
class EvalConfig:
    target_precision: float = 0.8
    global_threshold: bool = False
    n_hi_re: int | None = None  # None: take the generator's Hi-Re list
    label_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.target_precision <= 1.0:
            raise ValueError("target_precision must be in (0, 1]")


@dataclass
class RunConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    split: SplitConfig = field(default_factory=SplitConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    variants: tuple = ("noncons", "cons-agnostic", "cons-aware")
    model_seed: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = list(self.variants)
        d["split"]["fractions"] = list(self.split.fractions)
        return d

    def with_seed(self, seed: int) -> "RunConfig":
        """Same run with every seed derived from one master seed."""
        cfg = RunConfig.from_dict(self.to_dict())
        cfg.world.seed = seed
        cfg.split.seed = seed
        cfg.train.seed = seed
        return cfg

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ValueError("run config must be a JSON object")
        _reject_unknown(d, cls, "run config")
        kw = {}
        sections = {"split": SplitConfig, "encoder": EncoderConfig, "train": TrainConfig, "eval": EvalConfig}
        for key, value in d.items():
            if key == "world":
                kw[key] = WorldSpec.from_dict(value)
            elif key in sections:
                _reject_unknown(value, sections[key], key)
                kw[key] = sections[key](**value)
            elif key == "variants":
                kw[key] = tuple(value)
            else:
                kw[key] = value
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON: {e}") from None


def _reject_unknown(d, cls, where):
    if not isinstance(d, dict):
        raise ValueError(f"{where}: expected a JSON object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")


def bench_config() -> RunConfig:
    """The shipped benchmark configuration."""
    text = resources.files("localeq").joinpath("data/bench.json").read_text(encoding="utf-8")
    return RunConfig.from_dict(json.loads(text))
