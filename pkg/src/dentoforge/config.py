"""Pipeline configuration: dataclass defaults, TOML files, and overrides.

Precedence is built-in defaults < config file < explicit overrides (CLI).
Method constants live in the ``[paper]`` table; everything else is grouped
by stage.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PaperConstants:
    lambda_instance: float = 10.0
    lambda_scene: float = 2.5
    lr_position: float = 1.6e-4
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_color: float = 5e-3
    lr_color_final: float = 5e-4
    color_decay_epoch: int = 380
    sh_degree: int = 0
    guidance_instance: float = 50.0
    guidance_scene: float = 100.0
    dropout: float = 0.1
    transformer_blocks: int = 5
    transformer_heads: int = 8
    transformer_width: int = 512
    layout_iterations: int = 400
    stop_window: int = 10


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 1000
    schedule: str = "cosine"
    sample_steps: int = 50
    profile: str = "toy"
    toy_width: int = 64
    batch_size: int = 8
    lr: float = 1e-3
    lr_final: float = 1e-5
    train_jaws: int = 200
    max_missing: int = 4


@dataclass(frozen=True)
class OptimConfig:
    max_epochs: int = 400
    stop_rel_tol: float = 1e-3
    gaussians_per_tooth: int = 256
    spatial_lr_scale: Optional[float] = None   # None: use the scene extent
    eta_min_frac: float = 0.02
    eta_max_frac: float = 0.98
    collision: bool = True
    freeze_present: bool = False
    refresh_layout: bool = True


@dataclass(frozen=True)
class CameraConfig:
    n_views: int = 24
    elevations_deg: tuple = (-10.0, 20.0)
    radius_factor: float = 3.0
    fov_deg: float = 45.0
    width: int = 256
    height: int = 256


@dataclass(frozen=True)
class MetricsConfig:
    fscore_tau: float = 0.3
    points_per_tooth: int = 2048


@dataclass(frozen=True)
class PipelineConfig:
    paper: PaperConstants = field(default_factory=PaperConstants)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    optimize: OptimConfig = field(default_factory=OptimConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Apply ``{"section.key": value}`` or nested ``{section: {key: value}}`` overrides."""
        nested: dict = {}
        for key, value in overrides.items():
            if isinstance(value, dict):
                nested.setdefault(key, {}).update(value)
            elif "." in key:
                section, name = key.split(".", 1)
                nested.setdefault(section, {})[name] = value
            else:
                nested[key] = value
        return _merge(self, nested, "")


def _coerce(value, current, where):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float) or current is None:
        if value is None or (isinstance(value, (int, float)) and not isinstance(value, bool)):
            return None if value is None else float(value)
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(float(v) for v in value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _merge(obj, updates: dict, prefix: str):
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, value in updates.items():
        where = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {where!r}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a table")
            changes[key] = _merge(current, value, where + ".")
        else:
            changes[key] = _coerce(value, current, where)
    return replace(obj, **changes)


def load_config(path=None, overrides: Optional[dict] = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        with open(path, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        cfg = _merge(cfg, doc, "")
    if overrides:
        cfg = cfg.with_overrides({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {v!r} as TOML")


def dump_config(cfg: PipelineConfig) -> str:
    """TOML text that :func:`load_config` reads back to an equal config."""
    d = cfg.to_dict()
    lines = [f"seed = {d.pop('seed')}"]
    for section, values in d.items():
        lines.append(f"\n[{section}]")
        for k, v in values.items():
            if v is not None:
                lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"
