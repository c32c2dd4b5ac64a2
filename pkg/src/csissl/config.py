"""Declarative run configuration: one INI file, four sections.

Sections map onto the library config types: [synth] -> SynthConfig,
[pretrain] -> TrainConfig, [eval] -> EvalConfig, [diagnose] -> sweep and
spectrum knobs. Every key is optional; absent keys keep the library
defaults. Unknown sections or keys are rejected with their dotted path.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigError
from .evaluate import EvalConfig
from .synth import DeviceProfile, SynthConfig, default_classes, strong_distortion_profiles
from .train import TrainConfig

SECTIONS = ("synth", "pretrain", "eval", "diagnose")
DISTORTIONS = ("default", "strong", "none")


@dataclass(frozen=True)
class SynthSettings:
    links: int = 3
    subcarriers: int = 30
    frames: int = 200
    classes: int = 8
    samples_per_class: int = 50
    distortion: str = "default"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.distortion not in DISTORTIONS:
            raise ConfigError(
                f"synth.distortion must be one of {DISTORTIONS}, got {self.distortion!r}"
            )

    def build(self) -> SynthConfig:
        if self.distortion == "strong":
            ab, ba = strong_distortion_profiles(self.subcarriers)
        elif self.distortion == "none":
            ab = ba = DeviceProfile.identity(self.subcarriers)
        else:
            ab = ba = None
        return SynthConfig(
            links=self.links,
            subcarriers=self.subcarriers,
            frames=self.frames,
            classes=default_classes(self.classes),
            samples_per_class=self.samples_per_class,
            profile_ab=ab,
            profile_ba=ba,
            seed=self.seed,
        )


@dataclass(frozen=True)
class DiagnoseSettings:
    max_windows: int = 4096
    augmentations: tuple[str, ...] = ("dual_view", "gaussian_noise")
    jobs: int = 1
    shots: int = 6

    def __post_init__(self) -> None:
        if self.max_windows < 2:
            raise ConfigError(f"diagnose.max_windows must be >= 2, got {self.max_windows}")
        if self.jobs < 1:
            raise ConfigError(f"diagnose.jobs must be >= 1, got {self.jobs}")
        if self.shots < 1:
            raise ConfigError(f"diagnose.shots must be >= 1, got {self.shots}")


@dataclass(frozen=True)
class RunConfig:
    synth: SynthSettings
    train: TrainConfig
    eval: EvalConfig
    diagnose: DiagnoseSettings

    def with_seed(self, seed: int) -> "RunConfig":
        """One seed for everything: generation, pretraining, and eval splits."""
        return RunConfig(
            synth=replace(self.synth, seed=seed),
            train=replace(self.train, seed=seed),
            eval=replace(self.eval, seeds=(seed,)),
            diagnose=self.diagnose,
        )


def default_run_config() -> RunConfig:
    return RunConfig(
        synth=SynthSettings(),
        train=TrainConfig(method="capc"),
        eval=EvalConfig(),
        diagnose=DiagnoseSettings(),
    )


def _parse_bool(path: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{path}: cannot parse {raw!r} as a boolean")


def _parse_int(path: str, raw: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r} as an integer") from None


def _parse_float(path: str, raw: str) -> float:
    try:
        return float(raw.strip())
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r} as a number") from None


def _parse_int_list(path: str, raw: str) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{path}: expected a comma-separated list of integers")
    return tuple(_parse_int(path, p) for p in parts)


def _parse_str(path: str, raw: str) -> str:
    return raw.strip()


def _parse_name_list(path: str, raw: str) -> tuple[str, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{path}: expected a comma-separated list of names")
    return tuple(parts)


_SYNTH_KEYS = {
    "links": _parse_int,
    "subcarriers": _parse_int,
    "frames": _parse_int,
    "classes": _parse_int,
    "samples_per_class": _parse_int,
    "distortion": _parse_str,
    "seed": _parse_int,
}

_PRETRAIN_KEYS = {
    "method": _parse_str,
    "epochs": _parse_int,
    "batch_size": _parse_int,
    "lr_weights": _parse_float,
    "lr_bias_bn": _parse_float,
    "warmup_epochs": _parse_int,
    "weight_decay": _parse_float,
    "momentum": _parse_float,
    "lam": _parse_float,
    "beta": _parse_float,
    "eps": _parse_float,
    "n_future": _parse_int,
    "frames_per_window": _parse_int,
    "embed_dim": _parse_int,
    "context_dim": _parse_int,
    "projector_dim": _parse_int,
    "conv_channels": _parse_int_list,
    "min_timestep": _parse_int,
    "augmentations": _parse_str,
    "standardize": _parse_bool,
    "deterministic": _parse_bool,
    "checkpoint_every": _parse_int,
    "seed": _parse_int,
}

_EVAL_KEYS = {
    "batch_size": _parse_int,
    "epochs": _parse_int,
    "classifier_lr": _parse_float,
    "encoder_lr": _parse_float,
    "shots": _parse_int_list,
    "seeds": _parse_int_list,
}

_DIAGNOSE_KEYS = {
    "max_windows": _parse_int,
    "augmentations": _parse_name_list,
    "jobs": _parse_int,
    "shots": _parse_int,
}


def _section_values(
    parser: configparser.ConfigParser, section: str, schema: dict
) -> dict:
    if not parser.has_section(section):
        return {}
    values = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise ConfigError(f"unknown config key {section}.{key}")
        values[key] = schema[key](f"{section}.{key}", raw)
    return values


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate an INI run configuration."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with path.open(encoding="utf-8") as handle:
            parser.read_file(handle)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
    if parser.defaults():
        key = next(iter(parser.defaults()))
        raise ConfigError(f"unknown config key DEFAULT.{key}")
    synth = SynthSettings(**_section_values(parser, "synth", _SYNTH_KEYS))
    try:
        synth.build()
    except (ConfigError, ValueError) as exc:
        raise ConfigError(f"synth: {exc}") from exc
    train_values = _section_values(parser, "pretrain", _PRETRAIN_KEYS)
    if train_values.get("conv_channels") is not None:
        channels = train_values["conv_channels"]
        if len(channels) != 2:
            raise ConfigError(
                f"pretrain.conv_channels: expected exactly two values, got {len(channels)}"
            )
    try:
        train = TrainConfig(**train_values)
    except ConfigError as exc:
        raise ConfigError(f"pretrain: {exc}") from exc
    try:
        eval_config = EvalConfig(**_section_values(parser, "eval", _EVAL_KEYS))
    except ConfigError as exc:
        raise ConfigError(f"eval: {exc}") from exc
    diagnose = DiagnoseSettings(**_section_values(parser, "diagnose", _DIAGNOSE_KEYS))
    return RunConfig(synth=synth, train=train, eval=eval_config, diagnose=diagnose)
