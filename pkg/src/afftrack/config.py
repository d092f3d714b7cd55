"""Run configuration: ``key = value`` files with a validated schema.

Files use one assignment per line and ``#`` comments. Every key must be
in the schema; unknown keys fail loudly. Command-line overrides are merged
after file values. The model section of a configuration round-trips
through the sidecar file written next to trained weights, which is how
the tracking command rebuilds the network without a separate flag.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import DEFAULT_MEAN_PIXEL, read_key_values
from .model import ModelConfig, PROFILES, ReductionTap


class ConfigError(ValueError):
    """Configuration file or override is invalid."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part.strip()) for part in text.split(","))


def _parse_float_triple(text: str) -> tuple[float, float, float]:
    parts = [float(part.strip()) for part in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _parse_plan(text: str) -> tuple[ReductionTap, ...]:
    taps = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        pieces = item.split(":")
        if len(pieces) != 3:
            raise ConfigError(f"reduction plan entries are subnet:layer:channels, got {item!r}")
        taps.append(ReductionTap(pieces[0], int(pieces[1]), int(pieces[2])))
    return tuple(taps)


def _format_plan(plan: tuple[ReductionTap, ...]) -> str:
    return ",".join(f"{t.subnet}:{t.layer_id}:{t.out_channels}" for t in plan)


@dataclass(frozen=True)
class RunConfig:
    # model
    profile: str = "toy"
    n_m: int | None = None
    gamma: float | None = None
    input_h: int | None = None
    input_w: int | None = None
    assemble_mode: str | None = None
    reduction_plan: tuple[ReductionTap, ...] | None = None
    # optimization
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drops: tuple[int, ...] = (50, 80, 100)
    epochs: int = 120
    batch_size: int = 8
    # data
    pairs: int = 2000
    n_v: int = 30
    augment: bool = True
    mean_pixel: tuple[float, float, float] = DEFAULT_MEAN_PIXEL
    seed: int = 0


_PARSERS = {
    "profile": str,
    "n_m": int,
    "gamma": float,
    "input_h": int,
    "input_w": int,
    "assemble_mode": str,
    "reduction_plan": _parse_plan,
    "lr": float,
    "momentum": float,
    "weight_decay": float,
    "lr_drops": _parse_int_tuple,
    "epochs": int,
    "batch_size": int,
    "pairs": int,
    "n_v": int,
    "augment": _parse_bool,
    "mean_pixel": _parse_float_triple,
    "seed": int,
}

_MODEL_KEYS = ("profile", "n_m", "gamma", "input_h", "input_w", "assemble_mode", "reduction_plan")


def parse_run_config(values: dict[str, str], base: RunConfig = RunConfig()) -> RunConfig:
    updates = {}
    for key, raw in values.items():
        parser = _PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            updates[key] = parser(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    cfg = replace(base, **updates)
    if cfg.profile not in PROFILES:
        raise ConfigError(f"unknown profile {cfg.profile!r}; choose from {sorted(PROFILES)}")
    if cfg.epochs < 0 or cfg.batch_size < 1 or cfg.pairs < 0 or cfg.n_v < 1:
        raise ConfigError("epochs/pairs must be >= 0, batch_size and n_v >= 1")
    return cfg


def load_run_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = parse_run_config(read_key_values(path), cfg)
    if overrides:
        cfg = parse_run_config({k: v for k, v in overrides.items() if v is not None}, cfg)
    return cfg


def build_model_config(cfg: RunConfig) -> ModelConfig:
    model_cfg = PROFILES[cfg.profile]()
    updates = {}
    for key in ("n_m", "gamma", "input_h", "input_w", "assemble_mode", "reduction_plan"):
        value = getattr(cfg, key)
        if value is not None:
            updates[key] = value
    if updates:
        model_cfg = replace(model_cfg, **updates)
    model_cfg.validate()
    return model_cfg


def dump_model_section(cfg: RunConfig) -> str:
    """Canonical model keys for the weights sidecar file."""
    resolved = build_model_config(cfg)
    lines = [
        f"profile = {cfg.profile}",
        f"n_m = {resolved.n_m}",
        f"gamma = {_trim_float(resolved.gamma)}",
        f"input_h = {resolved.input_h}",
        f"input_w = {resolved.input_w}",
        f"assemble_mode = {resolved.assemble_mode}",
        f"reduction_plan = {_format_plan(resolved.reduction_plan)}",
    ]
    return "\n".join(lines) + "\n"


def _trim_float(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def run_config_fields() -> list[str]:
    return [f.name for f in fields(RunConfig)]
