"""
2D post-render compositing: occluder sprites, label updates under occlusion,
and a deterministic color-harmonisation stand-in.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage, special

from errors import DimensionError, ParameterError, ResourceError
from image_io import load_rgba
from models import DenseAnnotation
from rle import rle_decode, rle_encode

logger = logging.getLogger(__name__)

DEFAULT_SCALE_RANGE = (0.2, 0.7)
DEFAULT_CENTER_DILATION = 1.1
DEFAULT_MAX_ROTATION_DEG = 15.0
DEFAULT_HARMONIZE_STRENGTH = 0.5
OCCLUSION_THRESHOLD = 0.5

# Full-range BT.601
_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)
_FLAT_SPREAD = 1e-12


@dataclass(frozen=True, eq=False)
class OccluderSprite:
    rgba: np.ndarray    # (h, w, 4), float in [0, 1]
    source_id: str

    def __post_init__(self):
        if self.rgba.ndim != 3 or self.rgba.shape[2] != 4:
            raise DimensionError(f"sprite {self.source_id} must be RGBA, got {self.rgba.shape}")
        alpha = self.rgba[..., 3]
        if alpha.min() < 0.0 or alpha.max() > 1.0:
            raise ParameterError(f"sprite {self.source_id} alpha outside [0, 1]")
        if not np.any(alpha > 0.0):
            raise ParameterError(f"sprite {self.source_id} has an empty alpha support")

    @property
    def height(self) -> int:
        return self.rgba.shape[0]

    @property
    def width(self) -> int:
        return self.rgba.shape[1]

    @property
    def max_dimension(self) -> int:
        return max(self.height, self.width)


@dataclass(frozen=True)
class Placement:
    scale: float
    center: tuple[float, float]   # (x, y) pixels in the base frame
    rotation: float               # radians

    def __post_init__(self):
        if not self.scale > 0:
            raise ParameterError(f"placement scale must be positive, got {self.scale}")


def load_occluders(directory) -> list[OccluderSprite]:
    """All RGBA PNGs in a directory, sorted by file name."""
    root = Path(directory)
    files = sorted(root.glob("*.png")) if root.is_dir() else []
    if not files:
        raise ResourceError(f"no occluder sprites in {root}")
    return [OccluderSprite(load_rgba(path), path.stem) for path in files]


def sample_placement(rng: np.random.Generator, human_bbox, sprite: OccluderSprite,
                     scale_range=DEFAULT_SCALE_RANGE, center_dilation: float = DEFAULT_CENTER_DILATION,
                     max_rotation_deg: float = DEFAULT_MAX_ROTATION_DEG) -> Placement:
    """Random scale, center and rotation for a sprite over a person's bbox (x, y, w, h)."""
    x, y, w, h = human_bbox
    if w <= 0 or h <= 0:
        raise ParameterError(f"bbox must be non-empty, got {human_bbox}")
    target = rng.uniform(*scale_range) * math.hypot(w, h)
    half_w, half_h = center_dilation * w / 2.0, center_dilation * h / 2.0
    cx = rng.uniform(x + w / 2.0 - half_w, x + w / 2.0 + half_w)
    cy = rng.uniform(y + h / 2.0 - half_h, y + h / 2.0 + half_h)
    rotation = math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg))
    return Placement(scale=target / sprite.max_dimension, center=(cx, cy), rotation=rotation)


def default_band(sprite: OccluderSprite) -> tuple[float, float]:
    """(band_px, sigma_px) for a sprite: band = max(2, 3% of its max dimension), sigma = band / 2."""
    band = max(2.0, 0.03 * sprite.max_dimension)
    return band, band / 2.0


def _pixel_gaussian(sigma_px: float) -> np.ndarray:
    """Gaussian integrated over each pixel cell, truncated at 3 sigma and normalized."""
    radius = max(int(3.0 * sigma_px + 0.5), 1)
    edges = (np.arange(-radius, radius + 2) - 0.5) / sigma_px
    weights = np.diff(special.ndtr(edges))
    return weights / weights.sum()


def feather_alpha(alpha_mask: np.ndarray, band_px: float, sigma_px: float) -> np.ndarray:
    """
    Soften a mask edge.

    A Gaussian blur (truncated at 3 sigma) replaces the mask only within
    band_px of its boundary; further inside stays 1, further outside stays 0.
    """
    if band_px < 1:
        raise ParameterError(f"band_px must be >= 1, got {band_px}")
    mask = np.asarray(alpha_mask) > 0.5
    if not mask.any():
        return np.zeros(mask.shape)
    hard = mask.astype(np.float64)
    if mask.all():
        return hard
    kernel = _pixel_gaussian(sigma_px)
    blurred = ndimage.correlate1d(hard, kernel, axis=0, mode="nearest")
    blurred = ndimage.correlate1d(blurred, kernel, axis=1, mode="nearest")
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    band = np.where(mask, inside, outside) <= band_px
    return np.where(band, blurred, hard)


def prepare_sprite(sprite: OccluderSprite, band_px: Optional[float] = None,
                   sigma_px: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Pad the sprite so the feather has room; returns (rgb, feathered alpha)."""
    default_b, default_s = default_band(sprite)
    band = default_b if band_px is None else band_px
    sigma = default_s if sigma_px is None else sigma_px
    pad = int(math.ceil(band + 3.0 * sigma)) + 1
    rgb = np.pad(sprite.rgba[..., :3], ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    alpha = np.pad(sprite.rgba[..., 3], pad, mode="constant")
    return rgb, feather_alpha(alpha, band, sigma)


def resolve_alpha(sprite_rgb: np.ndarray, alpha_map: np.ndarray, placement: Placement,
                  height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Resample a sprite into a (height, width) base frame; returns (rgb, alpha)."""
    h, w = alpha_map.shape
    sprite_center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    cos_t, sin_t = math.cos(placement.rotation), math.sin(placement.rotation)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = xs - placement.center[0], ys - placement.center[1]
    # base = center + scale * R(theta) * (sprite - sprite_center); invert it
    sx = (cos_t * dx + sin_t * dy) / placement.scale + sprite_center[0]
    sy = (-sin_t * dx + cos_t * dy) / placement.scale + sprite_center[1]
    alpha = ndimage.map_coordinates(alpha_map, [sy, sx], order=1, mode="constant", cval=0.0)
    alpha = np.clip(alpha, 0.0, 1.0)
    rgb = np.zeros((height, width, sprite_rgb.shape[2]))
    support = alpha > 0.0
    if support.any():
        for c in range(sprite_rgb.shape[2]):
            rgb[support, c] = ndimage.map_coordinates(sprite_rgb[..., c], [sy[support], sx[support]],
                                                      order=1, mode="nearest")
    return rgb, alpha


def alpha_blend(base_image: np.ndarray, sprite_rgb: np.ndarray, alpha_map: np.ndarray,
                placement: Placement) -> tuple[np.ndarray, np.ndarray]:
    """
    Composite a sprite over the base image.

    Returns (image, resolved alpha in base-frame coordinates). Pixels where
    the resolved alpha is zero are copied from the base unchanged.
    """
    height, width = base_image.shape[:2]
    rgb, alpha = resolve_alpha(sprite_rgb, alpha_map, placement, height, width)
    out = base_image.astype(np.float64, copy=True)
    support = alpha > 0.0
    a = alpha[support][:, None]
    out[support] = a * rgb[support] + (1.0 - a) * out[support]
    return out, alpha


def _pixel_of_points(annotation: DenseAnnotation) -> tuple[np.ndarray, np.ndarray]:
    bx, by, bw, bh = annotation.bbox
    cols = np.floor(bx + np.asarray(annotation.dp_x) * bw / 256.0).astype(np.int64)
    rows = np.floor(by + np.asarray(annotation.dp_y) * bh / 256.0).astype(np.int64)
    return rows, cols


def bbox_frame_indices(bbox, size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Image row/column sampled by each cell of a size x size grid over the bbox (nearest)."""
    bx, by, bw, bh = bbox
    rows = np.floor(by + (np.arange(size) + 0.5) * bh / size).astype(np.int64)
    cols = np.floor(bx + (np.arange(size) + 0.5) * bw / size).astype(np.int64)
    return rows, cols


def update_labels_for_occlusion(annotation: DenseAnnotation, alpha: np.ndarray,
                                threshold: float = OCCLUSION_THRESHOLD, enabled: bool = True) -> DenseAnnotation:
    """
    Drop labels hidden under an occluder.

    With enabled=False the annotation is returned untouched. Otherwise dense
    points and mask pixels whose alpha exceeds threshold are removed and
    visible keypoints under the occluder fall back to flag 1. The bbox is
    kept.
    """
    if not enabled:
        return annotation
    covered = alpha > threshold
    if not covered.any():
        return annotation
    height, width = alpha.shape

    rows, cols = _pixel_of_points(annotation)
    rows, cols = np.clip(rows, 0, height - 1), np.clip(cols, 0, width - 1)
    keep = ~covered[rows, cols]
    points = {key: [v for v, k in zip(getattr(annotation, key), keep) if k]
              for key in ("dp_x", "dp_y", "dp_I", "dp_U", "dp_V")}

    fg = rle_decode(annotation.segmentation) & ~covered
    grid_rows, grid_cols = bbox_frame_indices(annotation.bbox)
    grid_rows = np.clip(grid_rows, 0, height - 1)
    grid_cols = np.clip(grid_cols, 0, width - 1)
    covered_grid = covered[np.ix_(grid_rows, grid_cols)]
    part_masks = [rle_encode(rle_decode(m) & ~covered_grid) for m in annotation.dp_masks]

    keypoints = list(annotation.keypoints)
    for k in range(0, len(keypoints), 3):
        if keypoints[k + 2] == 2:
            col = min(max(int(math.floor(keypoints[k])), 0), width - 1)
            row = min(max(int(math.floor(keypoints[k + 1])), 0), height - 1)
            if covered[row, col]:
                keypoints[k + 2] = 1

    logger.debug("labels updated for occlusion",
                 extra={"annotation": annotation.id, "dropped_points": int((~keep).sum())})
    return annotation.model_copy(update={
        **points,
        "segmentation": rle_encode(fg),
        "area": float(fg.sum()),
        "dp_masks": part_masks,
        "keypoints": keypoints,
    })


def harmonize(image: np.ndarray, foreground_mask: np.ndarray,
              strength: float = DEFAULT_HARMONIZE_STRENGTH) -> np.ndarray:
    """
    Pull foreground color statistics toward the background.

    Per-channel mean/std transfer in YCbCr, blended by strength in [0, 1].
    A channel with no spread in the background is left alone; a flat
    foreground channel only has its mean shifted.
    Background pixels are returned unchanged.
    """
    if not 0.0 <= strength <= 1.0:
        raise ParameterError(f"harmonize strength must be in [0, 1], got {strength}")
    mask = np.asarray(foreground_mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise DimensionError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    if not mask.any():
        raise ParameterError("harmonize needs a non-empty foreground mask")
    if mask.all():
        raise ParameterError("harmonize needs some background; the mask covers the whole frame")
    if strength == 0.0:
        return image.copy()

    ycc = image[..., :3] @ _RGB_TO_YCC.T
    fg, bg = ycc[mask], ycc[~mask]
    mu_f, mu_b = fg.mean(axis=0), bg.mean(axis=0)
    sd_f, sd_b = fg.std(axis=0), bg.std(axis=0)
    target = fg.copy()
    for c in range(3):
        if sd_b[c] <= _FLAT_SPREAD:
            logger.debug("flat background channel skipped", extra={"channel": c})
            continue
        scale = sd_b[c] / sd_f[c] if sd_f[c] > _FLAT_SPREAD else 1.0
        target[:, c] = (fg[:, c] - mu_f[c]) * scale + mu_b[c]

    blended = fg + strength * (target - fg)
    out = image.astype(np.float64, copy=True)
    out[mask, :3] = np.clip(blended @ _YCC_TO_RGB.T, 0.0, 1.0)
    return out
