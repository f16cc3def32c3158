"""One declarative experiment config with sections for dataset, model,
training, evaluation and io. Files are TOML or JSON; unknown keys are
rejected; the fully resolved config is echoed as JSON beside every output so
any run can be reproduced from its artifacts."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

from tranadapt.data.synth import SynthConfig
from tranadapt.losses import LossWeights, SimilarityConfig
from tranadapt.models import ModelConfig
from tranadapt.training import TrainConfig

OUTPUT_ENV = "TRAN_ADAPT_OUTPUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSection:
    real_root: str | None = None       # SUN RGB-D style metadata tree
    manifest: str | None = None        # path to a built manifest.jsonl
    synth: SynthConfig = field(default_factory=SynthConfig)
    extra_manifest: str | None = None  # unseen classes for generation eval


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 40
    epochs: int = 70
    lr_initial: float = 2e-4
    lr_constant_epochs: int = 20
    lr_decay_epochs: int = 50
    alpha_s: float = 10.0
    alpha_t: float = 3.0
    directions: str = "both"
    variant: str = "tran_adapt"
    taps: tuple[str, ...] = ("layer1", "layer2", "layer3", "layer4")
    sim_reduction: str = "mean"

    def to_train_config(self, seed: int, deterministic: bool) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr_initial=self.lr_initial,
            lr_constant_epochs=self.lr_constant_epochs,
            lr_decay_epochs=self.lr_decay_epochs,
            seed=seed,
            weights=LossWeights(self.alpha_s, self.alpha_t),
            similarity=SimilarityConfig(tuple(self.taps), self.sim_reduction),
            directions=self.directions,
            variant=self.variant,
            deterministic=deterministic,
        )


@dataclass(frozen=True)
class EvalSection:
    generation_metric: str = "rms"
    sweep_grid: tuple[float, ...] = (0.0, 0.5, 1.0, 3.0, 5.0, 10.0)
    split_ratio: float = 0.7


@dataclass(frozen=True)
class IoSection:
    output_dir: str = "runs"
    deterministic: bool = True
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    io: IoSection = field(default_factory=IoSection)

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV, self.io.output_dir))

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return self.train.to_train_config(
            self.io.seed if seed is None else seed, self.io.deterministic
        )

    def to_json(self) -> dict:
        return asdict(self)

    def echo(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.json").write_text(
            json.dumps(self.to_json(), indent=2), encoding="utf-8"
        )


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or cls.__name__} must be a table/object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section '{path or 'root'}'")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        value = data[name]
        sub = f.type if isinstance(f.type, type) else None
        target = {
            "dataset": DatasetSection, "model": ModelConfig, "train": TrainSection,
            "eval": EvalSection, "io": IoSection, "synth": SynthConfig,
        }.get(name)
        if target is not None and isinstance(value, dict):
            value = _build(target, value, f"{path}.{name}" if path else name)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid section '{path or 'root'}': {e}") from e


def load_config(path: Path | str | None) -> ExperimentConfig:
    """Load a TOML or JSON experiment config; None gives all defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    elif path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
    else:
        raise ConfigError(f"unsupported config format {path.suffix!r} (use .toml or .json)")
    return _build(ExperimentConfig, data, "")
