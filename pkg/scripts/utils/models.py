"""
Data models for corrgen.

Every record that crosses a file boundary (scene config rigs, COCO-DensePose
annotations, evaluation reports) is normalized to these schemas.
"""

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import DuplicateIdError

IDENTITY_4X4 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]


class CameraModel(BaseModel):
    """Pinhole camera with Brown-Conrady distortion (OpenCV axes: +x right, +y down, +z forward)."""
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0, description="Focal length in pixels")
    fy: float = Field(..., gt=0)
    cx: float
    cy: float
    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)

    # Radial and tangential distortion
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    world_from_camera: list[list[float]] = Field(default_factory=lambda: [row[:] for row in IDENTITY_4X4])
    near: float = 0.01
    far: float = 100.0

    @field_validator("world_from_camera")
    @classmethod
    def _rigid_transform(cls, value: list[list[float]]) -> list[list[float]]:
        mat = np.asarray(value, dtype=np.float64)
        if mat.shape != (4, 4):
            raise ValueError(f"world_from_camera must be 4x4, got {mat.shape}")
        rot = mat[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
            raise ValueError("world_from_camera rotation is not orthonormal")
        if not np.allclose(mat[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("world_from_camera last row must be [0, 0, 0, 1]")
        return value

    @model_validator(mode="after")
    def _clip_planes(self) -> "CameraModel":
        if not 0.0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        return self

    @property
    def pose(self) -> np.ndarray:
        return np.asarray(self.world_from_camera, dtype=np.float64)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def has_distortion(self) -> bool:
        return any((self.k1, self.k2, self.p1, self.p2))


class NoiseModel(BaseModel):
    """Additive Gaussian sensor noise."""
    model_config = ConfigDict(frozen=True)

    gaussian_sigma: float = Field(0.0, ge=0.0)
    seed_policy: Literal["per_frame", "fixed"] = "per_frame"


class CameraRig(BaseModel):
    """Ordered set of cameras, each with its own noise model."""
    model_config = ConfigDict(frozen=True)

    cameras: list[CameraModel] = Field(..., min_length=1)
    noise: list[NoiseModel] = Field(default_factory=list)

    @model_validator(mode="before")
    @classmethod
    def _noise_per_camera(cls, data):
        if isinstance(data, dict) and not data.get("noise"):
            data = {**data, "noise": [{} for _ in data.get("cameras") or []]}
        return data

    @model_validator(mode="after")
    def _noise_matches(self) -> "CameraRig":
        if len(self.noise) != len(self.cameras):
            raise ValueError(f"{len(self.noise)} noise models for {len(self.cameras)} cameras")
        return self


class RleMask(BaseModel):
    """COCO uncompressed RLE: column-major run lengths starting with a zero-run."""
    size: tuple[int, int] = Field(..., description="(height, width)")
    counts: list[int]

    @property
    def height(self) -> int:
        return self.size[0]

    @property
    def width(self) -> int:
        return self.size[1]


class DenseAnnotation(BaseModel):
    """One person instance in COCO-DensePose layout."""
    id: int
    image_id: int
    category_id: int = 1
    bbox: tuple[float, float, float, float] = Field(..., description="x, y, w, h in pixels, tight on the mask")
    area: float
    iscrowd: int = 0
    segmentation: RleMask

    # Dense points, x/y in the 256-normalized bbox frame
    dp_x: list[float] = Field(default_factory=list)
    dp_y: list[float] = Field(default_factory=list)
    dp_I: list[int] = Field(default_factory=list)
    dp_U: list[float] = Field(default_factory=list)
    dp_V: list[float] = Field(default_factory=list)
    dp_masks: list[RleMask] = Field(default_factory=list)

    keypoints: list[float] = Field(default_factory=list)
    num_keypoints: int = 0
    keypoints_3d: list[float] = Field(default_factory=list)

    # Only set on detections
    score: Optional[float] = None

    @model_validator(mode="after")
    def _point_arrays_agree(self) -> "DenseAnnotation":
        lengths = {len(self.dp_x), len(self.dp_y), len(self.dp_I), len(self.dp_U), len(self.dp_V)}
        if len(lengths) != 1:
            raise ValueError("dp_x, dp_y, dp_I, dp_U, dp_V must have equal length")
        if len(self.keypoints) % 3:
            raise ValueError("keypoints must be flat (x, y, flag) triples")
        return self

    @property
    def num_points(self) -> int:
        return len(self.dp_x)


class CocoImage(BaseModel):
    id: int
    file_name: str
    width: int
    height: int
    frame_index: Optional[int] = None
    camera_id: Optional[int] = None
    iuv_file: Optional[str] = None
    seg_file: Optional[str] = None
    depth_file: Optional[str] = None


class CocoCategory(BaseModel):
    id: int = 1
    name: str = "person"
    supercategory: str = "person"
    keypoints: list[str] = Field(default_factory=list)
    skeleton: list[list[int]] = Field(default_factory=list)


class CocoDataset(BaseModel):
    """Container written to annotations.json."""
    images: list[CocoImage] = Field(default_factory=list)
    annotations: list[DenseAnnotation] = Field(default_factory=list)
    categories: list[CocoCategory] = Field(default_factory=lambda: [CocoCategory()])

    @model_validator(mode="after")
    def _unique_ids(self) -> "CocoDataset":
        for key, records in (("images", self.images), ("annotations", self.annotations),
                             ("categories", self.categories)):
            seen = set()
            for index, record in enumerate(records):
                if record.id in seen:
                    raise DuplicateIdError(f"duplicate id {record.id}", key_path=f"{key}.{index}.id")
                seen.add(record.id)
        return self


class TaskScores(BaseModel):
    """AP/AR for one evaluation task, in percent."""
    ap: float = Field(0.0, ge=0.0, le=100.0)
    ap50: float = Field(0.0, ge=0.0, le=100.0)
    ap75: float = Field(0.0, ge=0.0, le=100.0)
    ar: float = Field(0.0, ge=0.0, le=100.0)
    ar50: float = Field(0.0, ge=0.0, le=100.0)
    ar75: float = Field(0.0, ge=0.0, le=100.0)


class EvalReport(BaseModel):
    """Evaluation results for the bbox, GPS, GPSm and Segm tasks."""
    tasks: dict[str, TaskScores] = Field(default_factory=dict)
    num_images: int = 0
    num_gt: int = 0
    num_detections: int = 0
    excluded_gpsm_pairs: int = 0

    def to_table(self) -> str:
        """Render the report as a fixed-width text table."""
        header = f"{'Task':<6}" + "".join(f"{col:>9}" for col in ("AP", "AP50", "AP75", "AR", "AR50", "AR75"))
        lines = [header, "-" * len(header)]
        for task, scores in self.tasks.items():
            values = (scores.ap, scores.ap50, scores.ap75, scores.ar, scores.ar50, scores.ar75)
            lines.append(f"{task:<6}" + "".join(f"{value:>9.2f}" for value in values))
        lines.append("")
        lines.append(f"images: {self.num_images}  gt: {self.num_gt}  detections: {self.num_detections}")
        return "\n".join(lines)
