"""Structured YAML run configuration with strict schema validation.

One file governs every pipeline stage. Field defaults follow the reference
protocol (30 s chunks, 30 min window, 1280-dim reference embeddings, 100
epochs, batch 32). Command-line flags override file values, and the fully
resolved configuration is snapshotted into the run directory so a run can be
replayed bit-for-bit from its snapshot alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .decoder import ModelConfig
from .errors import ConfigError
from .synth import SynthConfig
from .training import TrainConfig


@dataclass(frozen=True)
class PathsConfig:
    manifest: str = "corpus/manifest.csv"
    cache_dir: str = "cache"
    run_dir: str = "run"


@dataclass(frozen=True)
class FeatureSection:
    extractor: str = "reference"  # or "mock"
    chunk_s: float = 30.0
    window_s: float = 1800.0
    dim: int = 1280  # embedding width; the reference extractor reports its own

    def __post_init__(self):
        if self.extractor not in ("reference", "mock"):
            raise ConfigError(f"features.extractor must be 'reference' or 'mock', got {self.extractor!r}")


@dataclass(frozen=True)
class ModelSection:
    name: str = "proposed"
    d_model: int = 256
    n_heads: int = 8
    n_layers: int = 4
    d_ff: int | None = None
    recurrent_layers: int = 1
    n_score_classes: int = 17
    positional_encoding: bool = True
    strict_length_pooling: bool = False
    dropout: float = 0.0


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    alpha: float = 0.5
    beta: float = 0.5
    grad_clip: float = 1.0
    lr_schedule: str = "constant"
    early_stopping_patience: int = 0


@dataclass(frozen=True)
class EvalSection:
    n_bootstrap: int = 1000
    threshold: float = 0.5
    missing_scale_policy: str = "exclude"  # or "low"
    top_k: int = 10
    salience_source: str = "auto"
    encoder_layers: str = "all"  # or "final"


@dataclass(frozen=True)
class SynthSection:
    n_calls: int = 200
    prevalence: float = 0.5
    duration_min_s: float = 540.0
    duration_max_s: float = 7200.0
    sample_rate: int = 16000
    noise_std: float = 0.1
    signal_strength: float = 1.0
    signal_fraction: float = 0.5
    scale_alignment: float = 1.0
    missing_scale_rate: float = 0.0


_SECTIONS = {
    "paths": PathsConfig,
    "features": FeatureSection,
    "model": ModelSection,
    "train": TrainSection,
    "eval": EvalSection,
    "synth": SynthSection,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    features: FeatureSection = field(default_factory=FeatureSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    synth: SynthSection = field(default_factory=SynthSection)

    def model_config(self, input_dim: int, name: str | None = None) -> ModelConfig:
        m = self.model
        return ModelConfig(
            name=name or m.name,
            input_dim=input_dim,
            d_model=m.d_model,
            n_heads=m.n_heads,
            n_layers=m.n_layers,
            d_ff=m.d_ff,
            recurrent_layers=m.recurrent_layers,
            n_score_classes=m.n_score_classes,
            use_positional=m.positional_encoding,
            strict_length_pooling=m.strict_length_pooling,
            dropout=m.dropout,
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=t.epochs,
            batch_size=t.batch_size,
            learning_rate=t.learning_rate,
            weight_decay=t.weight_decay,
            alpha=t.alpha,
            beta=t.beta,
            grad_clip=t.grad_clip,
            lr_schedule=t.lr_schedule,
            early_stopping_patience=t.early_stopping_patience,
        )

    def synth_config(self) -> SynthConfig:
        s = self.synth
        return SynthConfig(
            n_calls=s.n_calls,
            prevalence=s.prevalence,
            duration_s=(s.duration_min_s, s.duration_max_s),
            sample_rate=s.sample_rate,
            noise_std=s.noise_std,
            signal_strength=s.signal_strength,
            signal_fraction=s.signal_fraction,
            chunk_s=self.features.chunk_s,
            window_s=self.features.window_s,
            scale_alignment=s.scale_alignment,
            missing_scale_rate=s.missing_scale_rate,
        )


def _build_section(cls, data: dict, section: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section '{section}'; "
            f"valid keys: {sorted(valid)}"
        )
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value in section '{section}': {e}") from e


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"configuration root must be a mapping, got {type(data).__name__}")
    valid = set(_SECTIONS) | {"seed"}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}; valid: {sorted(valid)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"section '{name}' must be a mapping")
        sections[name] = _build_section(cls, raw, name)
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return RunConfig(seed=seed, **sections)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid YAML: {e}") from e
    return config_from_dict(data or {})


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"seed": cfg.seed}
    for name in _SECTIONS:
        out[name] = dataclasses.asdict(getattr(cfg, name))
    return out


def save_config(cfg: RunConfig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def apply_overrides(cfg: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Apply dotted-path overrides like {"model.name": "gru", "seed": 3}."""
    data = config_to_dict(cfg)
    for dotted, value in overrides.items():
        if value is None:
            continue
        parts = dotted.split(".")
        target = data
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"unknown config path {dotted!r}")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config path {dotted!r}")
        target[parts[-1]] = value
    return config_from_dict(data)
