"""Pipeline configuration: a YAML file with a fixed key schema.

Unknown keys are rejected so a typo never silently falls back to a default.

Example::

    profile: desk
    presets: [1, 7]
    plahe: {window: [5, 5, 5], mode: auto}
    induction_lambda: 1.0
    geometry: {n_views: 90}
    noise_sigma: 0.05
    seed: 42
    ossart: {n_subsets: 10, n_epochs: 10}
    augment_presets: all
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

import yaml

from .augment import PRESETS as AUGMENT_PRESETS
from .ossart import OssartParams
from .plahe import COMBO_PRESETS, DEFAULT_WINDOW, PlaheParams, default_mode
from .xproject import ConeBeamGeometry, uniform_angles


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeometryConfig:
    dsd: float = 1500.0
    dso: float = 1000.0
    det_rows: int = 512
    det_cols: int = 512
    pixel_size: Tuple[float, float] = (1.0, 1.0)
    center_offset: Tuple[float, float] = (-160.0, 0.0)
    n_views: int = 500
    arc_deg: float = 360.0

    def build(self) -> ConeBeamGeometry:
        return ConeBeamGeometry(
            dsd=self.dsd, dso=self.dso, det_rows=self.det_rows, det_cols=self.det_cols,
            pixel_size=tuple(self.pixel_size), center_offset=tuple(self.center_offset),
            angles=uniform_angles(self.n_views, math.radians(self.arc_deg)),
        )


PROFILES = {
    "clinical": GeometryConfig(),
    "desk": GeometryConfig(det_rows=128, det_cols=128, center_offset=(0.0, 0.0), n_views=90),
}


@dataclass(frozen=True)
class PlaheConfig:
    window: Tuple[int, int, int] = DEFAULT_WINDOW
    mode: str = "auto"  # auto | direct | residual

    def params(self, index: int) -> PlaheParams:
        alpha, beta = COMBO_PRESETS[index - 1]
        mode = default_mode(beta) if self.mode == "auto" else self.mode
        return PlaheParams(alpha, beta, tuple(self.window), mode)


@dataclass(frozen=True)
class PipelineConfig:
    profile: str = "desk"
    presets: Tuple[int, ...] = tuple(range(1, len(COMBO_PRESETS) + 1))
    plahe: PlaheConfig = PlaheConfig()
    induction_lambda: float = 1.0
    geometry: GeometryConfig = PROFILES["desk"]
    projection_step_mm: Optional[float] = None
    noise_sigma: float = 0.0
    seed: int = 0
    ossart: OssartParams = OssartParams()
    augment_presets: Tuple[int, ...] = tuple(range(1, len(AUGMENT_PRESETS) + 1))
    primary_mask: Optional[str] = None
    output_dir: str = "out"

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        for p in self.presets:
            if not 1 <= p <= len(COMBO_PRESETS):
                raise ConfigError(f"PL-AHE preset {p} outside 1..{len(COMBO_PRESETS)}")
        for p in self.augment_presets:
            if not 1 <= p <= len(AUGMENT_PRESETS):
                raise ConfigError(f"augmentation preset {p} outside 1..{len(AUGMENT_PRESETS)}")
        if self.plahe.mode not in ("auto", "direct", "residual"):
            raise ConfigError(f"unknown PL-AHE mode {self.plahe.mode!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.projection_step_mm is not None and not self.projection_step_mm > 0:
            raise ConfigError("projection_step_mm must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            self.geometry.build()
            self.plahe.params(1)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.ossart.n_subsets > self.geometry.n_views:
            raise ConfigError("ossart.n_subsets exceeds geometry.n_views")

    def to_dict(self) -> dict:
        d = asdict(self)
        return _listify(d)

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _preset_list(value, n: int, where: str) -> Tuple[int, ...]:
    if value == "all":
        return tuple(range(1, n + 1))
    if isinstance(value, int):
        return (value,)
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    raise ConfigError(f"{where}: expected 'all', an index or a list of indices")


def config_from_dict(data: Optional[dict], **overrides) -> PipelineConfig:
    """Build a config from parsed YAML plus CLI-style overrides.

    The profile selects the base geometry; keys under ``geometry`` then
    override individual fields of that profile.
    """
    data = dict(data or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    profile = data.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    geom_over = data.pop("geometry", None) or {}
    base = asdict(PROFILES[profile])
    bad = sorted(set(geom_over) - set(base))
    if bad:
        raise ConfigError(f"geometry: unknown key(s) {', '.join(bad)}")
    base.update(geom_over)
    data["geometry"] = _build(GeometryConfig, base, "geometry")
    if "plahe" in data:
        data["plahe"] = _build(PlaheConfig, data["plahe"], "plahe")
    if "ossart" in data:
        data["ossart"] = _build(OssartParams, data["ossart"], "ossart")
    if "presets" in data:
        data["presets"] = _preset_list(data["presets"], len(COMBO_PRESETS), "presets")
    if "augment_presets" in data:
        data["augment_presets"] = _preset_list(data["augment_presets"], len(AUGMENT_PRESETS), "augment_presets")
    return _build(PipelineConfig, data, "config")


def load_config(path=None, **overrides) -> PipelineConfig:
    data = {}
    if path is not None:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
    return config_from_dict(data, **overrides)
