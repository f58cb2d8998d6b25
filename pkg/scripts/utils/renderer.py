"""
Per-pixel ray-traced rendering.

Every buffer of a frame (RGB, depth, IUV, part segmentation, instance mask)
is filled from the same single ray hit per pixel. Rows are processed in
fixed-size blocks, optionally on a thread pool; block size does not depend
on the worker count, so output is bit-identical for any number of workers.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from atlas import UvAtlas, chart_part_lut, sample_texture, surfaces_to_iuv
from camera import in_image, project_points
from errors import DimensionError
from geometry import Bvh, build_bvh, pixels_to_surface, ray_cast_batch
from image_io import save_depth, save_iuv, save_rgb, save_seg
from models import CameraModel

logger = logging.getLogger(__name__)

ROW_BLOCK = 32
AMBIENT = 0.3
KEYPOINT_EPSILON = 1e-3


@dataclass(frozen=True)
class Lighting:
    """One directional light; direction points from the surface toward the light (world frame)."""
    direction: tuple[float, float, float] = (0.3, 0.6, 0.75)
    intensity: float = 1.0
    ambient: float = AMBIENT

    def unit_direction(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        return d / np.linalg.norm(d)


@dataclass(eq=False)
class FrameBuffers:
    rgb: np.ndarray            # (H, W, 3) float in [0, 1]
    depth: np.ndarray          # (H, W) meters along the camera z axis, inf on background
    iuv: np.ndarray            # (H, W, 3) chart index, U, V
    part_seg: np.ndarray       # (H, W) uint8, 0 = background
    instance_mask: np.ndarray  # (H, W) bool
    face: np.ndarray = field(default=None)        # (H, W) hit face, -1 on background
    barycentric: np.ndarray = field(default=None)  # (H, W, 3)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def chart(self) -> np.ndarray:
        return self.iuv[..., 0].astype(np.uint8)

    def bbox(self) -> Optional[tuple[int, int, int, int]]:
        """Tight (x, y, w, h) of the instance mask, None when empty."""
        return mask_bbox(self.instance_mask)

    def save(self, out_dir, stem: str, sixteen_bit_iuv: bool = False) -> dict[str, Path]:
        """Write rgb/iuv/seg/depth files under out_dir; returns their paths (plus u16/v16 in 16-bit mode)."""
        out = Path(out_dir)
        paths = {
            "rgb": out / "images" / f"{stem}.png",
            "iuv": out / "labels" / f"{stem}_iuv.png",
            "seg": out / "labels" / f"{stem}_seg.png",
            "depth": out / "labels" / f"{stem}_depth.f32",
        }
        save_rgb(paths["rgb"], self.rgb)
        extra = save_iuv(paths["iuv"], self.iuv, sixteen_bit=sixteen_bit_iuv)[1:]
        for extra_path in extra:
            paths[extra_path.stem.rsplit("_", 1)[-1]] = extra_path
        save_seg(paths["seg"], self.part_seg)
        save_depth(paths["depth"], self.depth)
        return paths


def mask_bbox(mask: np.ndarray) -> Optional[tuple[int, int, int, int]]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1)


def resample_background(background: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize to (height, width); returned unchanged when it already fits."""
    if background.shape[:2] == (height, width):
        return background.astype(np.float64, copy=False)
    src_h, src_w = background.shape[:2]
    ys = (np.arange(height) + 0.5) * src_h / height - 0.5
    xs = (np.arange(width) + 0.5) * src_w / width - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    channels = [ndimage.map_coordinates(background[..., c].astype(np.float64), [grid_y, grid_x],
                                        order=1, mode="nearest") for c in range(background.shape[2])]
    return np.stack(channels, axis=-1)


def _shade(mesh, atlas: UvAtlas, texture: np.ndarray, lighting: Lighting,
           faces: np.ndarray, bary: np.ndarray) -> np.ndarray:
    charts, u, v = surfaces_to_iuv(atlas, faces, bary, "barycentric")
    albedo = sample_texture(texture, charts, u, v)[:, :3]
    if texture.dtype == np.uint8:
        albedo = albedo / 255.0
    normals = np.einsum("nk,nkd->nd", bary, np.asarray(mesh.normals)[np.asarray(mesh.faces)[faces]])
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    lambert = np.maximum(normals @ lighting.unit_direction(), 0.0)
    shade = lighting.ambient + (1.0 - lighting.ambient) * lighting.intensity * lambert
    return np.clip(albedo * np.clip(shade, 0.0, 1.0)[:, None], 0.0, 1.0)


def _render_rows(rows: np.ndarray, scene: dict) -> dict:
    camera: CameraModel = scene["camera"]
    width = camera.width
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64), rows.astype(np.float64))
    pixels = np.column_stack([xs.ravel(), ys.ravel()])
    background = scene["background"][rows].reshape(-1, 3)
    n = pixels.shape[0]

    out = {
        "rgb": background.copy(),
        "depth": np.full(n, np.inf),
        "iuv": np.zeros((n, 3)),
        "face": np.full(n, -1, dtype=np.int64),
        "barycentric": np.zeros((n, 3)),
        "invalid": 0,
    }
    mesh = scene["mesh"]
    if mesh is None:
        return out

    hits, valid = pixels_to_surface(camera, scene["bvh"], mesh, pixels)
    out["invalid"] = int((~valid).sum())
    fg = hits.hit
    if fg.any():
        points = hits.points(mesh)[fg]
        cam_points = (points - camera.center) @ camera.rotation
        charts, u, v = surfaces_to_iuv(scene["atlas"], hits.face[fg], hits.barycentric[fg], scene["iuv_mode"])
        out["depth"][fg] = cam_points[:, 2]
        out["iuv"][fg] = np.column_stack([charts, u, v])
        out["face"][fg] = hits.face[fg]
        out["barycentric"][fg] = hits.barycentric[fg]

    factor = scene["supersample"]
    if factor <= 1:
        if fg.any():
            out["rgb"][fg] = _shade(mesh, scene["atlas"], scene["texture"], scene["lighting"],
                                    hits.face[fg], hits.barycentric[fg])
        return out

    # RGB only: average factor x factor sub-pixel samples; labels keep the center sample
    accum = np.zeros((n, 3))
    offsets = (np.arange(factor) + 0.5) / factor - 0.5
    for dy in offsets:
        for dx in offsets:
            sub_hits, _ = pixels_to_surface(camera, scene["bvh"], mesh, pixels + (dx, dy))
            color = background.copy()
            sub_fg = sub_hits.hit
            if sub_fg.any():
                color[sub_fg] = _shade(mesh, scene["atlas"], scene["texture"], scene["lighting"],
                                       sub_hits.face[sub_fg], sub_hits.barycentric[sub_fg])
            accum += color
    out["rgb"] = accum / (factor * factor)
    return out


def render_frame(
    posed_mesh,
    atlas: UvAtlas,
    texture: np.ndarray,
    camera: CameraModel,
    background_image: np.ndarray,
    bvh: Optional[Bvh] = None,
    lighting: Lighting = Lighting(),
    iuv_mode: str = "barycentric",
    supersample: int = 1,
    workers: int = 1,
) -> FrameBuffers:
    """
    Render one frame over a background plate.

    posed_mesh may be None for an empty scene. The background is resampled
    bilinearly when its size differs from the camera's image size.
    """
    height, width = camera.height, camera.width
    if background_image.ndim != 3 or background_image.shape[2] < 3:
        raise DimensionError(f"background must be (H, W, 3), got {background_image.shape}")
    background = resample_background(background_image[..., :3], height, width)
    if posed_mesh is not None and atlas.num_faces != np.asarray(posed_mesh.faces).shape[0]:
        raise DimensionError(f"atlas covers {atlas.num_faces} faces, mesh has {posed_mesh.faces.shape[0]}")
    if posed_mesh is not None and bvh is None:
        bvh = build_bvh(posed_mesh)

    scene = {
        "camera": camera, "mesh": posed_mesh, "bvh": bvh, "atlas": atlas, "texture": texture,
        "background": background, "lighting": lighting, "iuv_mode": iuv_mode, "supersample": supersample,
    }
    blocks = [np.arange(start, min(start + ROW_BLOCK, height)) for start in range(0, height, ROW_BLOCK)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda rows: _render_rows(rows, scene), blocks))
    else:
        results = [_render_rows(rows, scene) for rows in blocks]

    def gather(key, shape):
        return np.concatenate([r[key] for r in results]).reshape(shape)

    iuv = gather("iuv", (height, width, 3))
    chart = iuv[..., 0].astype(np.int64)
    part_seg = chart_part_lut(atlas.chart_to_part)[chart] if atlas is not None else np.zeros_like(chart, np.uint8)
    invalid = sum(r["invalid"] for r in results)
    if invalid:
        logger.warning("pixels without a converged undistortion rendered as background",
                       extra={"pixels": invalid, "width": width, "height": height})

    return FrameBuffers(
        rgb=gather("rgb", (height, width, 3)),
        depth=gather("depth", (height, width)),
        iuv=iuv,
        part_seg=part_seg.astype(np.uint8),
        instance_mask=chart > 0,
        face=gather("face", (height, width)),
        barycentric=gather("barycentric", (height, width, 3)),
    )


def project_keypoints(skeleton, camera: CameraModel, mesh, bvh: Optional[Bvh],
                      epsilon: float = KEYPOINT_EPSILON) -> np.ndarray:
    """
    Project posed joints; returns (J, 3) rows of (x, y, flag).

    Flag 0: behind the camera or off the image (x = y = 0). Flag 1: the
    segment from the joint to the camera center crosses a surface farther
    than epsilon from the joint. Flag 2: visible.
    """
    joints = np.asarray(skeleton.posed_joints, dtype=np.float64)
    pixels, _, in_front = project_points(camera, joints)
    inside = in_front & in_image(camera, pixels)
    result = np.zeros((joints.shape[0], 3))
    result[inside, :2] = pixels[inside]
    result[inside, 2] = 2.0

    idx = np.flatnonzero(inside)
    if idx.size and mesh is not None and bvh is not None:
        to_camera = camera.center - joints[idx]
        distance = np.linalg.norm(to_camera, axis=1)
        dirs = to_camera / distance[:, None]
        origins = joints[idx] + epsilon * dirs
        hits = ray_cast_batch(bvh, mesh, origins, dirs, t_max=distance - epsilon)
        result[idx[hits.hit], 2] = 1.0
    return result
