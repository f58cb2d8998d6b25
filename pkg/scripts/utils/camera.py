"""
Camera projection, ray generation and sensor noise.

Conventions: OpenCV camera axes (+x right, +y down, +z forward), pixel
centers at integer coordinates, Brown-Conrady distortion applied to
normalized image coordinates.
"""

import logging
import math
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from errors import UndistortionError
from models import CameraModel, CameraRig, NoiseModel

logger = logging.getLogger(__name__)

UNDISTORT_MAX_ITERATIONS = 20
UNDISTORT_TOLERANCE = 1e-10


def world_to_camera(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    """Transform world points (N, 3) into the camera frame."""
    rot = camera.rotation
    return (np.asarray(points, dtype=np.float64) - camera.center) @ rot


def camera_to_world(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ camera.rotation.T + camera.center


def distort(camera: CameraModel, xy: np.ndarray) -> np.ndarray:
    """Apply radial (k1, k2) and tangential (p1, p2) distortion to normalized coords (N, 2)."""
    xy = np.asarray(xy, dtype=np.float64)
    if not camera.has_distortion:
        return xy.copy()
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + camera.k1 * r2 + camera.k2 * r2 * r2
    xd = x * radial + 2.0 * camera.p1 * x * y + camera.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + camera.p1 * (r2 + 2.0 * y * y) + 2.0 * camera.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def undistort(camera: CameraModel, xy_distorted: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Invert distortion by fixed-point iteration.

    Returns (xy, converged). Entries that do not settle within the iteration
    budget, or whose radial factor collapses, are flagged False.
    """
    xy_d = np.asarray(xy_distorted, dtype=np.float64)
    if not camera.has_distortion:
        return xy_d.copy(), np.ones(xy_d.shape[:-1], dtype=bool)

    xy = xy_d.copy()
    converged = np.zeros(xy_d.shape[:-1], dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for _ in range(UNDISTORT_MAX_ITERATIONS):
            x, y = xy[..., 0], xy[..., 1]
            r2 = x * x + y * y
            radial = 1.0 + camera.k1 * r2 + camera.k2 * r2 * r2
            dx = 2.0 * camera.p1 * x * y + camera.p2 * (r2 + 2.0 * x * x)
            dy = camera.p1 * (r2 + 2.0 * y * y) + 2.0 * camera.p2 * x * y
            updated = np.stack([(xy_d[..., 0] - dx) / radial, (xy_d[..., 1] - dy) / radial], axis=-1)
            step = np.max(np.abs(updated - xy), axis=-1)
            xy = np.where(np.isfinite(updated), updated, xy)
            converged = np.isfinite(step) & (step < UNDISTORT_TOLERANCE) & (radial > 0)
            if np.all(converged):
                break
    return xy, converged


def project_points(camera: CameraModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Project world points (N, 3).

    Returns (pixels (N, 2), depth (N,), in_front (N,)). Pixels of points at
    or behind the near plane are NaN.
    """
    cam = world_to_camera(camera, np.atleast_2d(points))
    depth = cam[:, 2]
    in_front = depth > camera.near
    safe_z = np.where(in_front, depth, 1.0)
    normalized = cam[:, :2] / safe_z[:, None]
    distorted = distort(camera, normalized)
    pixels = np.stack([camera.fx * distorted[:, 0] + camera.cx, camera.fy * distorted[:, 1] + camera.cy], axis=1)
    pixels[~in_front] = np.nan
    return pixels, depth, in_front


def project(camera: CameraModel, world_point) -> Optional[np.ndarray]:
    """Pixel coordinates of one point, or None when it is not in front of the near plane."""
    pixels, _, in_front = project_points(camera, np.asarray(world_point, dtype=np.float64).reshape(1, 3))
    return pixels[0] if in_front[0] else None


def in_image(camera: CameraModel, pixels: np.ndarray) -> np.ndarray:
    """True where a pixel position falls on the sensor."""
    x, y = pixels[:, 0], pixels[:, 1]
    with np.errstate(invalid="ignore"):
        return (x >= -0.5) & (x < camera.width - 0.5) & (y >= -0.5) & (y < camera.height - 0.5)


def pixel_rays(camera: CameraModel, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World rays through pixels (N, 2): (origins, unit directions, valid)."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    distorted = np.stack([(pixels[:, 0] - camera.cx) / camera.fx, (pixels[:, 1] - camera.cy) / camera.fy], axis=1)
    normalized, valid = undistort(camera, distorted)
    dirs_cam = np.concatenate([normalized, np.ones((len(pixels), 1))], axis=1)
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)
    dirs = dirs_cam @ camera.rotation.T
    origins = np.broadcast_to(camera.center, dirs.shape).copy()
    return origins, dirs, valid


def pixel_ray(camera: CameraModel, pixel) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray (origin, unit direction) through one pixel."""
    origins, dirs, valid = pixel_rays(camera, np.asarray(pixel, dtype=np.float64).reshape(1, 2))
    if not valid[0]:
        raise UndistortionError(f"undistortion did not converge at pixel ({pixel[0]:.2f}, {pixel[1]:.2f})")
    return origins[0], dirs[0]


def add_sensor_noise(image: np.ndarray, noise: NoiseModel, seed) -> np.ndarray:
    """Additive i.i.d. Gaussian noise on a [0, 1] image, clamped back to [0, 1]."""
    if noise.gaussian_sigma == 0.0:
        return image.copy()
    rng = np.random.default_rng(seed)
    noisy = image + rng.normal(0.0, noise.gaussian_sigma, size=image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype, copy=False)


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-from-camera pose looking from eye at target, image +y pointing away from up."""
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-12:
        raise ValueError("look_at: viewing direction is parallel to up")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = x, y, z, eye
    return pose


def default_rig(
    num_cameras: int = 9,
    focal_range: tuple[float, float] = (400.0, 900.0),
    width: int = 640,
    height: int = 480,
    yaw_spread_deg: float = 60.0,
    k1_range: tuple[float, float] = (-0.3, 0.1),
    distance: float = 3.5,
    target_height: float = 0.9,
    pitch_jitter_deg: float = 3.0,
    roll_jitter_deg: float = 2.0,
    noise_sigma: float = 0.01,
    seed: int = 0,
) -> CameraRig:
    """
    Cameras on an arc in front of the origin.

    Yaw is spread evenly over [-yaw_spread, +yaw_spread]; focal length,
    radial distortion and small pitch/roll jitter are drawn from a seeded
    generator, so the rig is reproducible.
    """
    rng = np.random.default_rng(seed)
    yaws = np.linspace(-yaw_spread_deg, yaw_spread_deg, num_cameras) if num_cameras > 1 else np.zeros(1)
    cameras = []
    for yaw_deg in yaws:
        focal = rng.uniform(*focal_range)
        k1 = rng.uniform(*k1_range)
        pitch = math.radians(rng.uniform(-pitch_jitter_deg, pitch_jitter_deg))
        roll = math.radians(rng.uniform(-roll_jitter_deg, roll_jitter_deg))
        yaw = math.radians(yaw_deg)

        eye = np.array([distance * math.sin(yaw), target_height, distance * math.cos(yaw)])
        pose = look_at(eye, (0.0, target_height, 0.0))
        jitter = Rotation.from_euler("xz", [pitch, roll]).as_matrix()
        pose[:3, :3] = pose[:3, :3] @ jitter
        cameras.append(CameraModel(
            fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
            width=width, height=height, k1=k1,
            world_from_camera=pose.tolist(),
        ))
    logger.debug("built default rig", extra={"cameras": num_cameras, "seed": seed})
    return CameraRig(cameras=cameras, noise=[NoiseModel(gaussian_sigma=noise_sigma) for _ in cameras])
