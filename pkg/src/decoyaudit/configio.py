"""Plain-text key-value config files, with CLI flags taking precedence."""

from __future__ import annotations

from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig

_MODEL_FIELDS = {"filters": int, "dropout_rate": float, "classes": int}
_TRAIN_FIELDS = {
    "epochs": int, "batch_size": int, "lr0": float, "lr_decay": float,
    "l2": float, "explanation_weight": float, "seed": int,
    "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
}


def read_kv_file(path) -> dict:
    """Parse 'key = value' lines; '#' starts a comment, blank lines ignored."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _pick(kv: dict, fields: dict, overrides: dict) -> dict:
    picked = {}
    for name, cast in fields.items():
        if overrides.get(name) is not None:
            picked[name] = cast(overrides[name])
        elif name in kv:
            picked[name] = cast(kv[name])
    return picked


def model_config_from(kv: dict | None = None, **overrides) -> ModelConfig:
    return ModelConfig(**_pick(kv or {}, _MODEL_FIELDS, overrides))


def train_config_from(kv: dict | None = None, **overrides) -> TrainConfig:
    return TrainConfig(**_pick(kv or {}, _TRAIN_FIELDS, overrides))
