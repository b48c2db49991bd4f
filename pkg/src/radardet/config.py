"""Run configuration loaded from a JSON or TOML file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli

from .pipeline import SelectionConfig


@dataclass
class BenchmarkSection:
    n_scripts: int = 24
    duration: float = 7.0
    test_fraction: float = 0.2
    split_trials: int = 2000


@dataclass
class TuneSection:
    budget: int = 100
    max_sequences: int = 12  # training sequences scored per evaluation
    clutter_weight: float = 0.05


@dataclass
class TrainSection:
    epochs: int = 60
    learning_rate: float = 1e-3
    batch_size: int = 64
    hidden: int = 80
    max_per_class: int | None = 2000  # examples per class; None keeps all


@dataclass
class RunConfig:
    workdir: str = "run"
    seed: int = 0
    profiles: list[str] = field(default_factory=lambda: ["A", "B"])
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    tune: TuneSection = field(default_factory=TuneSection)
    select: SelectionConfig = field(default_factory=SelectionConfig)
    train: TrainSection = field(default_factory=TrainSection)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in sections:
                raise ValueError(f"unknown config key {key!r}")
            sub = _SECTIONS.get(key)
            if sub is not None:
                known = {f.name for f in fields(sub)}
                bad = set(value) - known
                if bad:
                    raise ValueError(f"unknown keys in [{key}]: {sorted(bad)}")
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
        cfg = cls.from_dict(data)
        # a relative workdir is taken relative to the config file
        if not Path(cfg.workdir).is_absolute():
            cfg.workdir = str(path.parent / cfg.workdir)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "benchmark": BenchmarkSection,
    "tune": TuneSection,
    "select": SelectionConfig,
    "train": TrainSection,
}

__all__ = ["BenchmarkSection", "RunConfig", "TrainSection", "TuneSection"]
