"""Pipeline configuration: nested dataclasses loaded from YAML.

Every artifact the pipeline writes is a function of this object, so it is
echoed verbatim (canonicalised) into the output directory.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .data import BlobSpec
from .distill import KDConfig
from .explore import DEFAULT_ALPHAS
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "builtin"  # "builtin" or "file"
    path: str | None = None  # delimited file when source == "file"
    heldout_fraction: float = 0.5  # file datasets only; builtin has its own held-out draw
    blobs: BlobSpec = BlobSpec()

    def __post_init__(self):
        if self.source not in ("builtin", "file"):
            raise ConfigError(f"dataset.source must be 'builtin' or 'file', got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ConfigError("dataset.path is required when dataset.source is 'file'")
        if not 0 < self.heldout_fraction < 1:
            raise ConfigError("dataset.heldout_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TaskConfig:
    arch: str = "mlp"  # "mlp" or "cnn"
    hidden: tuple[int, ...] = (64, 64)
    channels: tuple[int, ...] = (8, 16)  # cnn only
    model: str | None = None  # defaults to <output>/task.dvq
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.arch not in ("mlp", "cnn"):
            raise ConfigError(f"task.arch must be 'mlp' or 'cnn', got {self.arch!r}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("task.hidden needs at least one positive width")


@dataclass(frozen=True)
class ExploreConfig:
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    kd: KDConfig = KDConfig()
    impact: str = "non-uniform"  # or "uniform"
    epsilon: float = 0.02

    def __post_init__(self):
        if len(self.alphas) < 2 or any(not 0 < a <= 1 for a in self.alphas):
            raise ConfigError("explore.alphas needs at least two multipliers in (0, 1]")
        if self.impact not in ("uniform", "non-uniform"):
            raise ConfigError(f"explore.impact must be 'uniform' or 'non-uniform', got {self.impact!r}")
        if not 0 <= self.epsilon < 1:
            raise ConfigError("explore.epsilon must lie in [0, 1)")


@dataclass(frozen=True)
class CampaignSection:
    # seed is not configurable here: campaigns draw from the master seed
    runs: int = 50_000
    flips: int = 300
    scope: str = "weights"

    def __post_init__(self):
        if self.runs < 0 or self.flips < 1:
            raise ConfigError("campaign.runs must be >= 0 and campaign.flips >= 1")
        if self.scope not in ("weights", "weights+activations"):
            raise ConfigError(f"campaign.scope must be 'weights' or 'weights+activations', got {self.scope!r}")


@dataclass(frozen=True)
class AttackConfig:
    bfa_flips: int = 50
    bfa_candidates: int = 20
    bfa_batch: int = 256  # attacker's input batch, taken from the training split

    def __post_init__(self):
        if self.bfa_flips < 0 or self.bfa_candidates < 1 or self.bfa_batch < 1:
            raise ConfigError("attack settings must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    output: str = "runs/default"
    dataset: DatasetConfig = DatasetConfig()
    task: TaskConfig = TaskConfig()
    explore: ExploreConfig = ExploreConfig()
    campaign: CampaignSection = CampaignSection()
    attack: AttackConfig = AttackConfig()

    @property
    def out_dir(self) -> Path:
        return Path(self.output)

    @property
    def task_path(self) -> Path:
        return Path(self.task.model) if self.task.model else self.out_dir / "task.dvq"

    def to_mapping(self) -> dict:
        return _plain(asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dump())

    @classmethod
    def from_mapping(cls, d: dict | None) -> "PipelineConfig":
        return _build(cls, d or {}, "")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from e
        if d is not None and not isinstance(d, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")
        return cls.from_mapping(d)

    def with_overrides(self, **kw: Any) -> "PipelineConfig":
        return replace(self, **kw)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where or 'config'}: {sorted(unknown)}")
    defaults = cls()
    kw = {}
    for name, value in d.items():
        default = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if is_dataclass(default):
            kw[name] = _build(type(default), value or {}, path)
        elif isinstance(default, tuple):
            if value is not None and not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path} must be a list")
            kw[name] = tuple(value) if value is not None else None
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where or 'config'}: {e}") from e

