"""Run configuration: nested dataclasses, YAML loading, dotted-path overrides.

Two named profiles exist: ``desk`` (small widths, runs on a laptop CPU) and
``full`` (full-scale hyperparameters). Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from reftrack.harness.errors import ConfigError


@dataclass
class ModelConfig:
    dim: int = 64
    heads: int = 4
    ffn_dim: int = 128
    backbone_channels: tuple[int, int, int] = (16, 32, 64)
    encoder_layers: int = 2
    decoder_layers: int = 2
    detect_queries: int = 20
    text_dim: int = 32
    freeze_text: bool = False
    fusion_row_softmax: bool = False


@dataclass
class TemporalConfig:
    enabled: bool = True
    memory_frames: int = 4
    memory_slots: int = 32
    history_window: int | None = None  # None -> memory_frames
    temporal_layers: int = 2
    object_layers: int = 2
    refine: bool = True
    confidence_target: str = "class"

    def window(self, memory_frames: int | None = None) -> int:
        if self.history_window is not None:
            return self.history_window
        return memory_frames if memory_frames is not None else self.memory_frames


@dataclass
class ThresholdConfig:
    class_score: float = 0.6
    referring_score: float = 0.4
    keep_score: float = 0.5
    miss_tolerance: int = 5


@dataclass
class LossConfig:
    cls: float = 5.0
    l1: float = 2.0
    giou: float = 2.0
    ref: float = 2.0
    st_cls: float = 5.0
    st_l1: float = 2.0
    st_giou: float = 2.0
    st_ref: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_clips: int = 4  # clips averaged into each optimizer step
    lr: float = 1e-3
    lr_drop_step: int = 1400
    lr_drop_factor: float = 0.1
    clip_length: int = 10
    erase_prob: float = 0.2
    insert_prob: float = 0.3
    track_jitter: float = 0.02  # std of box noise on propagated track queries
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 25


@dataclass
class DataConfig:
    root: str = ""


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def desk_profile() -> RunConfig:
    return RunConfig(profile="desk")


def full_profile() -> RunConfig:
    """Full-scale hyperparameters; far too heavy for CPU test runs."""
    return RunConfig(
        profile="full",
        model=ModelConfig(
            dim=256,
            heads=8,
            ffn_dim=1024,
            backbone_channels=(64, 128, 256),
            encoder_layers=6,
            decoder_layers=6,
            detect_queries=300,
            text_dim=128,
            freeze_text=True,
        ),
        temporal=TemporalConfig(
            memory_frames=5,
            memory_slots=300,
            temporal_layers=4,
            object_layers=4,
        ),
        train=TrainConfig(
            steps=200_000,
            batch_clips=8,
            lr=1e-5,
            lr_drop_step=160_000,
            clip_length=6,
        ),
    )


PROFILES = {"desk": desk_profile, "full": full_profile}


# ---------------------------------------------------------------------------
# dict round trip


def _to_plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, tuple):
        return [_to_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


import types
import typing


def _coerce(raw: Any, target_type: Any, path: str) -> Any:
    origin = typing.get_origin(target_type)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(target_type) if a is not type(None)]
        if raw is None:
            return None
        return _coerce(raw, args[0], path)
    if target_type is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{path}: expected number, got {raw!r}")
        return float(raw)
    if target_type is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{path}: expected integer, got {raw!r}")
        return raw
    if target_type is bool:
        if not isinstance(raw, bool):
            raise ConfigError(f"{path}: expected boolean, got {raw!r}")
        return raw
    if target_type is str:
        if not isinstance(raw, str):
            raise ConfigError(f"{path}: expected string, got {raw!r}")
        return raw
    if origin is tuple:
        if not isinstance(raw, (list, tuple)):
            raise ConfigError(f"{path}: expected list, got {raw!r}")
        args = typing.get_args(target_type)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(raw))
        if len(raw) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(raw)}")
        return tuple(_coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(raw, args)))
    raise ConfigError(f"{path}: unsupported config field type {target_type!r}")


def _fill_dataclass(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected mapping, got {raw!r}")
    known = _FIELD_TYPES[cls]
    unknown = set(raw) - set(known)
    if unknown:
        where = path or "config"
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, target in known.items():
        if name not in raw:
            continue
        sub_path = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(target):
            kwargs[name] = _fill_dataclass(target, raw[name], sub_path)
        else:
            kwargs[name] = _coerce(raw[name], target, sub_path)
    return cls(**kwargs)


# dataclass field types resolved once (string annotations come from
# `from __future__ import annotations`)
_FIELD_TYPES = {
    cls: typing.get_type_hints(cls)
    for cls in (
        ModelConfig, TemporalConfig, ThresholdConfig,
        LossConfig, TrainConfig, DataConfig, RunConfig,
    )
}


def config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig: profile defaults first, then explicit keys on top."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {raw!r}")
    profile = raw.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    base = PROFILES[profile]()
    merged = config_to_dict(base)
    _deep_update(merged, raw, "")
    return _fill_dataclass(RunConfig, merged, "")


def _deep_update(base: dict, extra: dict, path: str) -> None:
    for key, value in extra.items():
        sub_path = f"{path}.{key}" if path else key
        if key in base and isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{sub_path}: expected mapping, got {value!r}")
            _deep_update(base[key], value, sub_path)
        else:
            base[key] = value


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    profile: str | None = None,
) -> RunConfig:
    """Load a YAML config file (or defaults) and apply --set overrides.

    ``profile`` selects the baseline when neither the file nor an override
    names one.
    """
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {p}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: config root must be a mapping")
        raw = loaded
    if profile is not None:
        raw.setdefault("profile", profile)
    for item in overrides or []:
        _apply_override(raw, item)
    return config_from_dict(raw)


def _parse_override_value(text: str):
    # plain int/float first: YAML 1.1 reads "1e-4" as a string
    s = text.strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return yaml.safe_load(text)


def _apply_override(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    dotted, text = item.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override has no key path: {item!r}")
    value = _parse_override_value(text)
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {dotted!r} collides with a scalar")
    node[keys[-1]] = value


def config_hash(cfg: RunConfig) -> str:
    """Stable short hash of the full config contents."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
