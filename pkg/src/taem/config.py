"""Flat key=value configuration shared by the CLI commands.

One namespace of documented keys; anything else is rejected so a typo
never silently falls back to a default.  Files hold `key=value` lines
('#' comments allowed); command-line --set overrides win over the file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .dsp import MelConfig
from .network import ModelConfig

LOSS_MODES = ("mse", "contrastive", "mse+contrastive")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 64
    max_steps: int = 2000
    seed: int = 1234
    loss_mode: str = "mse"
    temperature: float = 0.07
    dis_weight: float = 1.0
    dur_weight: float = 1.0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(
                f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}"
            )
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# key -> (caster, which dataclass/feature it feeds)
_SCHEMA: dict[str, type] = {
    # model
    "hidden": int,
    "heads": int,
    "g_blocks": int,
    "h_blocks": int,
    "ffn_kernel": int,
    "ffn_width": int,
    "dp_kernel": int,
    "dp_channels": int,
    "dropout": float,
    "subsample_kernel": int,
    # training
    "lr": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "weight_decay": float,
    "batch_size": int,
    "max_steps": int,
    "seed": int,
    "loss_mode": str,
    "temperature": float,
    "dis_weight": float,
    "dur_weight": float,
    "checkpoint_every": int,
    # mel frontend
    "sample_rate": int,
    "n_mels": int,
    "hop": int,
    "window": int,
    "n_fft": int,
    "fmin": float,
    "fmax": float,
    # data preparation / stubs
    "oracle_seed": int,
    "stub_seed": int,
    "video_fps": int,
}

_MODEL_KEYS = (
    "hidden", "heads", "g_blocks", "h_blocks", "ffn_kernel", "ffn_width",
    "dp_kernel", "dp_channels", "dropout", "subsample_kernel",
)
_TRAIN_KEYS = (
    "lr", "beta1", "beta2", "eps", "weight_decay", "batch_size", "max_steps",
    "seed", "loss_mode", "temperature", "dis_weight", "dur_weight",
    "checkpoint_every",
)
_MEL_KEYS = ("sample_rate", "n_mels", "hop", "window", "n_fft", "fmin", "fmax")

DEFAULT_ORACLE_SEED = 9000
DEFAULT_STUB_SEED = 777


class ConfigError(ValueError):
    pass


def _cast(key: str, value: str):
    if key not in _SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    caster = _SCHEMA[key]
    try:
        return caster(value)
    except ValueError:
        raise ConfigError(
            f"config key {key!r}: cannot interpret {value!r} as {caster.__name__}"
        ) from None


def parse_config_file(path) -> dict:
    options: dict = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        options[key.strip()] = _cast(key.strip(), value.strip())
    return options


def apply_overrides(options: dict, overrides: list[str]) -> dict:
    merged = dict(options)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        merged[key.strip()] = _cast(key.strip(), value.strip())
    return merged


def load_options(config_path, overrides: list[str] | None = None) -> dict:
    options = parse_config_file(config_path) if config_path else {}
    return apply_overrides(options, overrides or [])


def model_config(options: dict, vocab_size: int, vocab_version: str) -> ModelConfig:
    kwargs = {k: options[k] for k in _MODEL_KEYS if k in options}
    return ModelConfig(vocab_size=vocab_size, vocab_version=vocab_version, **kwargs)


def train_config(options: dict) -> TrainConfig:
    kwargs = {k: options[k] for k in _TRAIN_KEYS if k in options}
    return TrainConfig(**kwargs)


def mel_config(options: dict) -> MelConfig:
    kwargs = {k: options[k] for k in _MEL_KEYS if k in options}
    return MelConfig(**kwargs)
