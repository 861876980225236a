"""Versioned JSON run configuration.

Unknown keys are rejected at every level: silent default drift is worse than
a loud parse error. Every emitted artifact embeds the resolved config plus
the seed so runs are reproducible from the artifact alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .hybrid_decoder import GateMode, Integration, InitMode, ModelConfig, QueryMode

SCHEMA_VERSION = 1

_MODEL_KEYS = {
    "num_layers", "hidden_dim", "num_heads", "num_kv_heads", "head_dim",
    "ffn_dim", "vocab_size", "hybrid_indices", "gate_mode", "query_mode",
    "integration", "init_mode",
}
_RUN_KEYS = {"version", "model", "compression", "seed", "precision", "output_path"}

_ENUMS = {"gate_mode": GateMode, "query_mode": QueryMode, "integration": Integration, "init_mode": InitMode}


class ConfigError(ValueError):
    """Invalid run/model configuration."""


def parse_enum(enum_cls, value, key: str):
    try:
        return enum_cls(value)
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"unknown {key} {value!r}; valid values: {valid}") from None


def model_config_from_dict(d: dict) -> ModelConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"model config must be an object, got {type(d).__name__}")
    unknown = set(d) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    missing = {"num_layers", "hidden_dim", "num_heads", "num_kv_heads", "head_dim", "ffn_dim", "vocab_size"} - set(d)
    if missing:
        raise ConfigError(f"missing model config keys: {sorted(missing)}")
    kwargs = dict(d)
    for key, enum_cls in _ENUMS.items():
        if key in kwargs:
            kwargs[key] = parse_enum(enum_cls, kwargs[key], key)
    if "hybrid_indices" in kwargs and kwargs["hybrid_indices"] is not None:
        kwargs["hybrid_indices"] = tuple(kwargs["hybrid_indices"])
    try:
        return ModelConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "num_layers": cfg.num_layers,
        "hidden_dim": cfg.hidden_dim,
        "num_heads": cfg.num_heads,
        "num_kv_heads": cfg.num_kv_heads,
        "head_dim": cfg.head_dim,
        "ffn_dim": cfg.ffn_dim,
        "vocab_size": cfg.vocab_size,
        "hybrid_indices": list(cfg.hybrid_indices),
        "gate_mode": cfg.gate_mode.value,
        "query_mode": cfg.query_mode.value,
        "integration": cfg.integration.value,
        "init_mode": cfg.init_mode.value,
    }


@dataclass
class RunConfig:
    model: ModelConfig
    compression: str | None = None
    seed: int = 0
    precision: int = 64
    output_path: str | None = None

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "model": model_config_to_dict(self.model),
            "compression": self.compression,
            "seed": self.seed,
            "precision": self.precision,
            "output_path": self.output_path,
        }


def run_config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(d) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
    version = d.get("version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {SCHEMA_VERSION})")
    if "model" not in d:
        raise ConfigError("run config needs a 'model' section")
    return RunConfig(
        model=model_config_from_dict(d["model"]),
        compression=d.get("compression"),
        seed=int(d.get("seed", 0)),
        precision=int(d.get("precision", 64)),
        output_path=d.get("output_path"),
    )


def load_run_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from None
    return run_config_from_dict(raw)


def dump_json(obj) -> str:
    """Canonical JSON used for every emitted artifact: sorted keys, stable layout."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def toy_model_config(**overrides) -> ModelConfig:
    """Default toy model: 4 layers, d=64, hybrid layers at [0, 2]. Small enough
    for 64-bit finite differences while keeping the real model's structure
    (a hybrid layer at index 0, even spacing)."""
    base = dict(
        num_layers=4,
        hidden_dim=64,
        num_heads=4,
        num_kv_heads=2,
        head_dim=16,
        ffn_dim=256,
        vocab_size=101,
        hybrid_indices=(0, 2),
    )
    base.update(overrides)
    return ModelConfig(**base)


def toy_run_config(seed: int = 0, **overrides) -> RunConfig:
    return RunConfig(model=toy_model_config(**overrides), compression="64-p4", seed=seed)
