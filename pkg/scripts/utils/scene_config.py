"""
Scene, run and evaluation configuration.

A scene config is one JSON file; relative paths inside it are resolved
against the directory that holds it. CLI flags override individual fields
through RunConfig.
"""

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError, ResourceError
from models import CameraRig


def _ordered_range(value: tuple[float, float]) -> tuple[float, float]:
    if value[0] > value[1]:
        raise ValueError(f"range must be (low, high), got {value}")
    return value


class RigRanges(BaseModel):
    """Sampler settings for the default camera rig."""
    num_cameras: int = Field(9, ge=1)
    focal_range: tuple[float, float] = (400.0, 900.0)
    width: int = Field(640, ge=1)
    height: int = Field(480, ge=1)
    yaw_spread_deg: float = 60.0
    k1_range: tuple[float, float] = (-0.3, 0.1)
    distance: float = Field(3.5, gt=0)
    target_height: float = 0.9
    pitch_jitter_deg: float = 3.0
    roll_jitter_deg: float = 2.0
    noise_sigma: float = Field(0.01, ge=0)
    seed: int = 0

    @field_validator("focal_range", "k1_range")
    @classmethod
    def _ordered(cls, value: tuple[float, float]) -> tuple[float, float]:
        return _ordered_range(value)


class AvatarPlacement(BaseModel):
    """Where the avatar stands inside a camera's viewing cone."""
    depth_range: tuple[float, float] = (2.8, 4.2)
    lateral_fraction: float = Field(0.3, ge=0.0, le=1.0)
    yaw_range_deg: tuple[float, float] = (-60.0, 60.0)
    shape_sigma: float = Field(1.0, ge=0.0)
    beta_clamp: float = Field(5.0, gt=0.0)

    @field_validator("depth_range", "yaw_range_deg")
    @classmethod
    def _ordered(cls, value: tuple[float, float]) -> tuple[float, float]:
        return _ordered_range(value)


class LightingRanges(BaseModel):
    elevation_deg: tuple[float, float] = (20.0, 70.0)
    azimuth_deg: tuple[float, float] = (-90.0, 90.0)
    intensity: tuple[float, float] = (0.6, 1.0)
    ambient: float = Field(0.3, ge=0.0, le=1.0)


class OcclusionSettings(BaseModel):
    probability: float = Field(0.5, ge=0.0, le=1.0)
    max_occluders: int = Field(2, ge=1)
    scale_range: tuple[float, float] = (0.2, 0.7)
    center_dilation: float = Field(1.1, gt=0.0)
    max_rotation_deg: float = 15.0
    band_px: Optional[float] = Field(None, ge=1.0)
    sigma_px: Optional[float] = Field(None, gt=0.0)
    threshold: float = Field(0.5, ge=0.0, le=1.0)


class SceneConfig(BaseModel):
    """Everything that determines a generated dataset, besides the code."""
    model_config = ConfigDict(extra="forbid")

    master_seed: int = Field(0, ge=0)
    num_frames: int = Field(10, ge=1)

    models: dict[str, str] = Field(..., min_length=1, description="gender tag -> body model container")
    atlas: str
    chart_parts: Optional[str] = None
    backgrounds: str
    textures: dict[str, str] = Field(..., min_length=1, description="gender tag -> texture directory")
    occluders: Optional[str] = None
    occluders_enabled: bool = True
    clips: list[str] = Field(..., min_length=1)
    retarget_map: Optional[str] = None
    loop_clips: bool = True

    rig: Optional[CameraRig] = None
    rig_ranges: RigRanges = Field(default_factory=RigRanges)
    avatar: AvatarPlacement = Field(default_factory=AvatarPlacement)
    lighting: LightingRanges = Field(default_factory=LightingRanges)
    occlusion: OcclusionSettings = Field(default_factory=OcclusionSettings)

    n_points: int = Field(196, ge=1)
    occlusion_aware_labels: bool = True
    harmonize: bool = True
    harmonize_lambda: float = Field(0.5, ge=0.0, le=1.0)
    supersample: int = Field(1, ge=1, le=4)
    iuv_mode: Literal["barycentric", "nearest_vertex"] = "barycentric"
    iuv_16bit: bool = False
    crop_threshold: float = Field(0.95, gt=0.0, le=1.0)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _genders_have_textures(self) -> "SceneConfig":
        missing = sorted(set(self.models) - set(self.textures))
        if missing:
            raise ValueError(f"no texture directory for gender tags {missing}")
        return self

    def resolve_paths(self, base_dir) -> "SceneConfig":
        """Copy with every relative resource path made absolute against base_dir."""
        base = Path(base_dir)

        def fix(value: Optional[str]) -> Optional[str]:
            if value is None:
                return None
            path = Path(value)
            return str(path if path.is_absolute() else (base / path).resolve())

        return self.model_copy(update={
            "models": {tag: fix(p) for tag, p in self.models.items()},
            "atlas": fix(self.atlas),
            "chart_parts": fix(self.chart_parts),
            "backgrounds": fix(self.backgrounds),
            "textures": {tag: fix(p) for tag, p in self.textures.items()},
            "occluders": fix(self.occluders),
            "clips": [fix(p) for p in self.clips],
            "retarget_map": fix(self.retarget_map),
        })

    @property
    def gender_tags(self) -> list[str]:
        return sorted(self.models)


def load_scene_config(path) -> SceneConfig:
    """Read and validate a scene config file."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ResourceError(f"missing file: {config_path}")
    try:
        data = json.loads(config_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    try:
        config = SceneConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigError(f"{config_path}: {where}: {first['msg']}") from exc
    return config.resolve_paths(config_path.parent)


class RunConfig(BaseModel):
    """One CLI invocation."""
    command: str
    config_path: Optional[str] = None
    out_dir: Optional[str] = None
    seed: Optional[int] = None
    workers: Optional[int] = Field(None, ge=1)
    frames: Optional[tuple[int, int]] = Field(None, description="half-open [start, stop)")
    no_occluders: bool = False
    harmonize_lambda: Optional[float] = Field(None, ge=0.0, le=1.0)
    occlusion_aware_labels: Optional[bool] = None
    supersample: Optional[int] = Field(None, ge=1, le=4)

    @field_validator("frames")
    @classmethod
    def _non_empty(cls, value: Optional[tuple[int, int]]) -> Optional[tuple[int, int]]:
        if value is not None and not 0 <= value[0] < value[1]:
            raise ValueError(f"frame range must be non-empty with start >= 0, got {value[0]}..{value[1]}")
        return value

    def apply(self, scene: SceneConfig) -> SceneConfig:
        """Scene config with this run's overrides applied."""
        update = {}
        if self.workers is not None:
            update["workers"] = self.workers
        if self.seed is not None:
            update["master_seed"] = self.seed
        if self.no_occluders:
            update["occluders_enabled"] = False
        if self.harmonize_lambda is not None:
            update["harmonize_lambda"] = self.harmonize_lambda
        if self.occlusion_aware_labels is not None:
            update["occlusion_aware_labels"] = self.occlusion_aware_labels
        if self.supersample is not None:
            update["supersample"] = self.supersample
        return scene.model_copy(update=update)

    def frame_indices(self, scene: SceneConfig) -> range:
        if self.frames is None:
            return range(scene.num_frames)
        return range(self.frames[0], self.frames[1])


def _default_thresholds() -> list[float]:
    return [round(float(t), 2) for t in np.arange(0.5, 0.951, 0.05)]


class MetricsConfig(BaseModel):
    """Evaluation protocol parameters."""
    kappa: float = Field(0.255, gt=0.0, description="geodesic kernel bandwidth, mesh units")
    iou_thresholds: list[float] = Field(default_factory=_default_thresholds)
    min_score: float = 0.0
    max_detections: int = Field(20, ge=1)
    geodesic_cache_size: int = Field(4096, ge=1)

    @field_validator("iou_thresholds")
    @classmethod
    def _increasing(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError("need at least one threshold")
        if any(not 0.0 < t <= 1.0 for t in value):
            raise ValueError("thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("thresholds must be strictly increasing")
        return value
