"""Flat ``key = value`` run configuration files.

One option per line; ``#`` starts a comment. Unknown keys are rejected so a
typo never silently falls back to a default.
"""
from __future__ import annotations

from pathlib import Path

from .attacks import AttackConfig
from .errors import ConfigError
from .model import ModelConfig
from .synthdata import DatasetConfig
from .training import TrainConfig


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _parse_optional_int(text: str):
    return None if text.lower() == "none" else int(text)


# key -> (section, field, parser)
SCHEMA = {
    "epochs": ("train", "epochs", int),
    "adversarial_start_epoch": ("train", "adversarial_start_epoch", _parse_optional_int),
    "lr": ("train", "lr", float),
    "batch": ("train", "batch", int),
    "lambda_edge": ("train", "lambda_edge", float),
    "masking_ratio": ("train", "masking_ratio", float),
    "seed": ("train", "seed", int),
    "checkpoint_every": ("train", "checkpoint_every", int),
    "adv_use_edge": ("train", "adv_use_edge", _parse_bool),
    "pairs_per_epoch": ("train", "pairs_per_epoch", _parse_optional_int),
    "eval_pairs": ("train", "eval_pairs", int),
    "attack_method": ("attack", "method", str),
    "attack_eps": ("attack", "eps", float),
    "attack_iterations": ("attack", "iterations", int),
    "attack_momentum": ("attack", "momentum", float),
    "attack_step_rule": ("attack", "step_rule", str),
    "attack_norm": ("attack", "norm", str),
    "attack_random_init": ("attack", "random_init", _parse_bool),
    "attack_apply_sor": ("attack", "apply_sor", _parse_bool),
    "attack_delta": ("attack", "delta_adv", float),
    "sor_k": ("attack", "sor_k", int),
    "sor_alpha": ("attack", "sor_alpha", float),
    "encoder_channels": ("model", "encoder_channels", _parse_int_tuple),
    "decoder_widths": ("model", "decoder_widths", _parse_int_tuple),
    "norm_eps": ("model", "norm_eps", float),
    "train_identities": ("dataset", "train_identities", int),
    "train_poses": ("dataset", "train_poses", int),
    "test_identities": ("dataset", "test_identities", int),
    "unseen_poses": ("dataset", "unseen_poses", int),
    "rings_per_limb": ("dataset", "rings_per_limb", int),
    "vertices_per_ring": ("dataset", "vertices_per_ring", int),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; validates syntax and key names only."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str | Path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def _section_values(raw: dict[str, str], section: str) -> dict:
    values = {}
    for key, value in raw.items():
        sec, field, parser = SCHEMA[key]
        if sec != section:
            continue
        try:
            values[field] = parser(value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return values


def build_configs(raw: dict[str, str],
                  overrides: dict[str, str] | None = None
                  ) -> tuple[TrainConfig, DatasetConfig]:
    """Assemble the full run configuration from raw key/value strings."""
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    try:
        model = ModelConfig(**_section_values(raw, "model"))
        attack = AttackConfig(**_section_values(raw, "attack"))
        train = TrainConfig(attack=attack, model=model, **_section_values(raw, "train"))
        dataset = DatasetConfig(**_section_values(raw, "dataset"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return train, dataset


def load_run_config(path: str | Path | None,
                    overrides: dict[str, str] | None = None
                    ) -> tuple[TrainConfig, DatasetConfig]:
    raw = load_config(path) if path is not None else {}
    return build_configs(raw, overrides)
