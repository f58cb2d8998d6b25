"""
Scene sampling, frame generation and COCO-DensePose interchange.

Every random choice behind frame i comes from a generator seeded with
(master_seed, i), so a frame's bytes do not depend on which worker renders
it or in which order frames run. Completed frames are gathered, sorted by
frame index and written once, together with a checksum manifest.
"""

import dataclasses
import functools
import hashlib
import json
import logging
import math
import shutil
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from atlas import NUM_PARTS, UvAtlas, load_atlas, load_chart_parts, mix_textures, part_layout
from body_model import (BodyModel, PoseParams, ShapeParams, apply_shape, forward_kinematics, lbs_skin,
                        load_body_model)
from camera import add_sensor_noise, camera_to_world, default_rig, in_image, project_points, world_to_camera
from compositor import (OccluderSprite, alpha_blend, bbox_frame_indices, harmonize, load_occluders,
                        prepare_sprite, sample_placement, update_labels_for_occlusion)
from errors import (AtlasCoverageError, CocoFormatError, DimensionError, FrameRangeError, ManifestDriftError,
                    MotionError, ResourceError)
from geometry import build_bvh
from image_io import SEG_PALETTE, atomic_path, load_rgb, write_text_atomic
from mocap import MotionClip, RetargetMap, load_bvh, load_retarget_map, retarget_clip, sample_pose
from models import CameraModel, CameraRig, CocoCategory, CocoDataset, CocoImage, DenseAnnotation
from renderer import FrameBuffers, Lighting, mask_bbox, project_keypoints, render_frame
from rle import rle_decode, rle_encode
from scene_config import SceneConfig

__all__ = [
    "SceneSpec", "SceneResources", "load_resources", "sample_scene", "compose_frame", "extract_annotation",
    "generate_frame", "generate_dataset", "write_coco", "read_coco", "rle_encode", "rle_decode",
    "overlay_parts", "render_preview", "package_dataset",
]

logger = logging.getLogger(__name__)

DEFAULT_POINTS = 196
BBOX_FRAME = 256
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
ANNOTATIONS_NAME = "annotations.json"
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "corrgen-dataset"
PREVIEW_BLEND = 0.6
_SEED_RANGE = 2 ** 31

SKIP_EMPTY = "empty instance"
SKIP_CROPPED = "cropped by image border"
SKIP_OCCLUDED = "fully occluded"


def round_sig(value: float, digits: int = 6) -> float:
    """Round to significant digits; annotation floats are stored this way."""
    return float(f"{value:.{digits}g}")


# Resources

@dataclass(frozen=True)
class OccluderChoice:
    sprite_id: int
    seed: int


@dataclass(frozen=True)
class SceneSpec:
    """Every random choice behind one frame; with the config it fixes the frame's bytes."""
    frame_index: int
    master_seed: int
    camera_id: int
    background_id: int
    gender: str
    beta: tuple[float, ...]
    clip_id: int
    clip_time: float
    depth: float
    lateral: tuple[float, float]
    yaw_deg: float
    texture_ids: tuple[int, int]
    mix_seed: int
    light_elevation_deg: float
    light_azimuth_deg: float
    light_intensity: float
    occluders: tuple[OccluderChoice, ...]
    noise_seed: int
    point_seed: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(eq=False)
class SceneResources:
    """Loaded libraries a scene config points at. Built once per process."""
    rig: CameraRig
    models: dict[str, BodyModel]
    atlas: UvAtlas
    backgrounds: list[Path]
    textures: dict[str, list[Path]]
    clips: list[MotionClip]
    poses: dict[tuple[int, str], list]
    occluders: list[OccluderSprite] = field(default_factory=list)
    prepared_occluders: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def _list_images(directory, what: str) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise ResourceError(f"missing {what} directory: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ResourceError(f"no {what} images in {root}")
    return files


@functools.lru_cache(maxsize=64)
def _load_image(path: str) -> np.ndarray:
    image = load_rgb(path)
    image.setflags(write=False)
    return image


def load_resources(config: SceneConfig) -> SceneResources:
    """Load and cross-check everything the config references. Raises before any output is written."""
    rig = config.rig or default_rig(**config.rig_ranges.model_dump())
    models = {tag: load_body_model(config.models[tag]) for tag in config.gender_tags}

    atlas = load_atlas(config.atlas)
    if config.chart_parts:
        chart_to_part, part_names = load_chart_parts(config.chart_parts)
        atlas = UvAtlas(faces=atlas.faces, face_chart=atlas.face_chart, corner_uv=atlas.corner_uv,
                        chart_to_part=dict(chart_to_part), part_names=dict(part_names))
    for tag, model in models.items():
        if not np.array_equal(np.asarray(model.faces), atlas.faces):
            raise AtlasCoverageError(f"atlas faces do not match the '{tag}' body model topology")

    backgrounds = _list_images(config.backgrounds, "background")
    textures = {tag: _list_images(config.textures[tag], f"'{tag}' texture") for tag in config.gender_tags}

    occluders, prepared = [], []
    if config.occluders_enabled:
        if not config.occluders:
            raise ResourceError("occluders are enabled but no occluder directory is configured")
        occluders = load_occluders(config.occluders)
        prepared = [prepare_sprite(s, config.occlusion.band_px, config.occlusion.sigma_px) for s in occluders]

    clips = [load_bvh(path) for path in config.clips]
    for path, clip in zip(config.clips, clips):
        if clip.num_frames == 0:
            raise MotionError(f"{path}: clip has no frames")
    rmap = load_retarget_map(config.retarget_map) if config.retarget_map else None
    poses = {}
    for clip_id, clip in enumerate(clips):
        for tag, model in models.items():
            mapping = rmap or RetargetMap.by_name(clip.joint_names, model.joint_names)
            poses[(clip_id, tag)] = retarget_clip(clip, mapping, model.num_joints)

    logger.info("resources loaded", extra={
        "cameras": len(rig.cameras), "genders": config.gender_tags, "backgrounds": len(backgrounds),
        "clips": len(clips), "occluders": len(occluders),
    })
    return SceneResources(rig=rig, models=models, atlas=atlas, backgrounds=backgrounds, textures=textures,
                          clips=clips, poses=poses, occluders=occluders, prepared_occluders=prepared)


# Scene sampling

def frame_rng(master_seed: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, frame_index])


def sample_scene(config: SceneConfig, frame_index: int, resources: Optional[SceneResources] = None) -> SceneSpec:
    """
    Draw one frame's scene.

    The draw sequence is fixed: optional features still consume their
    draws when disabled, so toggling one never reshuffles the others.
    """
    if frame_index < 0:
        raise FrameRangeError(f"frame index must be >= 0, got {frame_index}")
    res = resources or load_resources(config)
    rng = frame_rng(config.master_seed, frame_index)
    avatar, light, occ = config.avatar, config.lighting, config.occlusion

    camera_id = int(rng.integers(len(res.rig.cameras)))
    background_id = int(rng.integers(len(res.backgrounds)))
    tags = config.gender_tags
    gender = tags[int(rng.integers(len(tags)))]
    beta = np.clip(rng.normal(0.0, avatar.shape_sigma, res.models[gender].num_shapes),
                   -avatar.beta_clamp, avatar.beta_clamp)

    clip_id = int(rng.integers(len(res.clips)))
    clip = res.clips[clip_id]
    span = clip.duration + (clip.frame_time if config.loop_clips and clip.num_frames > 1 else 0.0)
    clip_time = float(rng.uniform(0.0, span))

    depth = float(rng.uniform(*avatar.depth_range))
    lateral = rng.uniform(-avatar.lateral_fraction, avatar.lateral_fraction, size=2)
    yaw = float(rng.uniform(*avatar.yaw_range_deg))

    texture_ids = rng.integers(len(res.textures[gender]), size=2)
    mix_seed = int(rng.integers(_SEED_RANGE))
    elevation = float(rng.uniform(*light.elevation_deg))
    azimuth = float(rng.uniform(*light.azimuth_deg))
    intensity = float(rng.uniform(*light.intensity))

    occ_roll = rng.random()
    occ_count = int(rng.integers(1, occ.max_occluders + 1))
    sprite_ids = rng.integers(max(len(res.occluders), 1), size=occ.max_occluders)
    sprite_seeds = rng.integers(_SEED_RANGE, size=occ.max_occluders)
    noise_seed, point_seed = (int(s) for s in rng.integers(_SEED_RANGE, size=2))

    occluded = config.occluders_enabled and bool(res.occluders) and occ_roll < occ.probability
    choices = tuple(OccluderChoice(int(sprite_ids[k]), int(sprite_seeds[k]))
                    for k in range(occ_count)) if occluded else ()

    return SceneSpec(
        frame_index=frame_index, master_seed=config.master_seed, camera_id=camera_id,
        background_id=background_id, gender=gender, beta=tuple(float(b) for b in beta),
        clip_id=clip_id, clip_time=clip_time, depth=depth, lateral=(float(lateral[0]), float(lateral[1])),
        yaw_deg=yaw, texture_ids=(int(texture_ids[0]), int(texture_ids[1])), mix_seed=mix_seed,
        light_elevation_deg=elevation, light_azimuth_deg=azimuth, light_intensity=intensity,
        occluders=choices, noise_seed=noise_seed, point_seed=point_seed,
    )


# Frame composition

@dataclass(eq=False)
class ComposedFrame:
    spec: SceneSpec
    camera: CameraModel
    buffers: FrameBuffers
    keypoints: np.ndarray       # (J, 3) x, y, flag
    keypoints_3d: np.ndarray    # (J, 3) camera frame
    occlusion_alpha: np.ndarray
    skip_reason: Optional[str] = None


def _pose_at(res: SceneResources, spec: SceneSpec) -> PoseParams:
    clip = res.clips[spec.clip_id]
    poses = res.poses[(spec.clip_id, spec.gender)]
    if spec.clip_time > clip.duration and len(poses) > 1:
        # wrap-around segment from the last frame back to the first
        return sample_pose([poses[-1], poses[0]], spec.clip_time - clip.duration, clip.frame_time)
    return sample_pose(poses, spec.clip_time, clip.frame_time)


def _facing_angle(eye: np.ndarray, target: np.ndarray) -> float:
    """Yaw about +y that turns a +z-facing body at target toward eye."""
    return math.atan2(eye[0] - target[0], eye[2] - target[2])


def _place_avatar(model: BodyModel, camera: CameraModel, spec: SceneSpec, pose: PoseParams, beta_clamp: float):
    """Stand the posed avatar inside the camera frustum; the clip's own root translation is dropped."""
    shaped = apply_shape(model, ShapeParams(np.asarray(spec.beta), clamp=beta_clamp))
    rest = model.rest_joints(shaped)
    root = model.joint_order()[0]

    offset = [spec.lateral[0] * spec.depth * (camera.width / 2.0) / camera.fx,
              spec.lateral[1] * spec.depth * (camera.height / 2.0) / camera.fy,
              spec.depth]
    target = camera_to_world(camera, np.asarray([offset]))[0]
    facing = _facing_angle(camera.center, target)

    rotations = np.array(pose.joint_rotations)
    yaw = Rotation.from_euler("y", facing + math.radians(spec.yaw_deg))
    rotations[root] = (yaw * Rotation.from_rotvec(rotations[root])).as_rotvec()
    placed = PoseParams(rotations, target - rest[root])

    skeleton = forward_kinematics(model, shaped, placed)
    return lbs_skin(model, shaped, skeleton, placed), skeleton, facing


def _layout_for(texture: np.ndarray, atlas: UvAtlas) -> np.ndarray:
    tile = texture.shape[1] // 4
    return part_layout(tile, atlas.chart_to_part)


def compose_frame(config: SceneConfig, res: SceneResources, spec: SceneSpec,
                  add_noise: bool = True, render_workers: int = 1) -> ComposedFrame:
    """Render, occlude, harmonize and add sensor noise for one sampled scene."""
    camera = res.rig.cameras[spec.camera_id]
    model = res.models[spec.gender]
    mesh, skeleton, facing = _place_avatar(model, camera, spec, _pose_at(res, spec), config.avatar.beta_clamp)
    bvh = build_bvh(mesh)

    textures = res.textures[spec.gender]
    tex_a = _load_image(str(textures[spec.texture_ids[0]]))
    tex_b = _load_image(str(textures[spec.texture_ids[1]]))
    if tex_a.shape != tex_b.shape:
        raise DimensionError(f"textures {textures[spec.texture_ids[0]].name} and "
                             f"{textures[spec.texture_ids[1]].name} differ in size")
    texture, _ = mix_textures(tex_a, tex_b, _layout_for(tex_a, res.atlas), np.random.default_rng(spec.mix_seed))

    elevation = math.radians(spec.light_elevation_deg)
    azimuth = facing + math.radians(spec.light_azimuth_deg)
    lighting = Lighting(
        direction=(math.cos(elevation) * math.sin(azimuth), math.sin(elevation),
                   math.cos(elevation) * math.cos(azimuth)),
        intensity=spec.light_intensity,
        ambient=config.lighting.ambient,
    )
    background = _load_image(str(res.backgrounds[spec.background_id]))
    buffers = render_frame(mesh, res.atlas, texture, camera, background, bvh=bvh, lighting=lighting,
                           iuv_mode=config.iuv_mode, supersample=config.supersample, workers=render_workers)
    keypoints = project_keypoints(skeleton, camera, mesh, bvh)
    keypoints_3d = world_to_camera(camera, skeleton.posed_joints)

    skip = None
    pixels, _, in_front = project_points(camera, np.asarray(mesh.vertices))
    cropped = 1.0 - float(np.mean(in_front & in_image(camera, pixels)))
    if not buffers.instance_mask.any():
        skip = SKIP_EMPTY
    elif cropped > config.crop_threshold:
        skip = SKIP_CROPPED

    rgb = buffers.rgb
    alpha_total = np.zeros(buffers.instance_mask.shape)
    bbox = buffers.bbox()
    occ = config.occlusion
    if spec.occluders and bbox is not None:
        for choice in spec.occluders:
            sprite = res.occluders[choice.sprite_id]
            sprite_rgb, sprite_alpha = res.prepared_occluders[choice.sprite_id]
            placement = sample_placement(np.random.default_rng(choice.seed), bbox, sprite,
                                         occ.scale_range, occ.center_dilation, occ.max_rotation_deg)
            rgb, alpha = alpha_blend(rgb, sprite_rgb, sprite_alpha, placement)
            alpha_total = 1.0 - (1.0 - alpha_total) * (1.0 - alpha)

    if config.harmonize and config.harmonize_lambda > 0.0:
        foreground = buffers.instance_mask & ~(alpha_total > occ.threshold)
        if foreground.any() and not foreground.all():
            rgb = harmonize(rgb, foreground, config.harmonize_lambda)
        else:
            logger.debug("harmonization skipped", extra={"frame_index": spec.frame_index})

    if add_noise:
        noise = res.rig.noise[spec.camera_id]
        seed = ([spec.master_seed, spec.frame_index, spec.noise_seed] if noise.seed_policy == "per_frame"
                else [spec.master_seed, spec.camera_id])
        rgb = add_sensor_noise(rgb, noise, seed)
    buffers.rgb = rgb

    return ComposedFrame(spec=spec, camera=camera, buffers=buffers, keypoints=keypoints,
                         keypoints_3d=keypoints_3d, occlusion_alpha=alpha_total, skip_reason=skip)


# Annotation extraction

def _sample_pixels(mask: np.ndarray, scene: SceneSpec, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Foreground pixels sampled uniformly without replacement, in row-major order."""
    flat = np.flatnonzero(mask.ravel())
    if flat.size > n_points:
        rng = np.random.default_rng([scene.master_seed, scene.frame_index, scene.point_seed])
        flat = np.sort(rng.choice(flat, size=n_points, replace=False))
    return np.divmod(flat, mask.shape[1])


def extract_annotation(buffers: FrameBuffers, scene: SceneSpec, atlas: UvAtlas, n_points: int = DEFAULT_POINTS,
                       keypoints: Optional[np.ndarray] = None,
                       keypoints_3d: Optional[np.ndarray] = None) -> Optional[DenseAnnotation]:
    """
    Turn rendered label buffers into one COCO-DensePose instance.

    Returns None (and logs why) when the instance mask is empty. Point x/y
    live in the 256 x 256 bbox frame; part masks are resampled into that
    frame by nearest neighbour.
    """
    mask = buffers.instance_mask
    bbox = mask_bbox(mask)
    if bbox is None:
        logger.info("frame skipped", extra={"frame_index": scene.frame_index, "reason": SKIP_EMPTY})
        return None
    bx, by, bw, bh = bbox

    rows, cols = _sample_pixels(mask, scene, n_points)
    iuv = buffers.iuv[rows, cols]
    dp_x = [round_sig((c - bx + 0.5) * BBOX_FRAME / bw) for c in cols]
    dp_y = [round_sig((r - by + 0.5) * BBOX_FRAME / bh) for r in rows]

    grid_rows, grid_cols = bbox_frame_indices(bbox, BBOX_FRAME)
    grid = buffers.part_seg[np.ix_(grid_rows, grid_cols)]
    part_masks = [rle_encode(grid == part) for part in range(1, NUM_PARTS + 1)]

    flat_keypoints, visible = [], 0
    if keypoints is not None:
        for x, y, flag in np.asarray(keypoints):
            flat_keypoints += [round_sig(x), round_sig(y), float(flag)]
            visible += int(flag > 0)
    flat_3d = [round_sig(v) for v in np.asarray(keypoints_3d).ravel()] if keypoints_3d is not None else []

    return DenseAnnotation(
        id=scene.frame_index + 1,
        image_id=scene.frame_index + 1,
        bbox=(float(bx), float(by), float(bw), float(bh)),
        area=float(mask.sum()),
        segmentation=rle_encode(mask),
        dp_x=dp_x,
        dp_y=dp_y,
        dp_I=[int(i) for i in iuv[:, 0]],
        dp_U=[round_sig(u) for u in iuv[:, 1]],
        dp_V=[round_sig(v) for v in iuv[:, 2]],
        dp_masks=part_masks,
        keypoints=flat_keypoints,
        num_keypoints=visible,
        keypoints_3d=flat_3d,
    )


# Generation

@dataclass
class FrameRecord:
    frame_index: int
    image: Optional[CocoImage] = None
    annotation: Optional[DenseAnnotation] = None
    files: list[str] = field(default_factory=list)
    skip_reason: Optional[str] = None


def _skip(frame_index: int, reason: str) -> FrameRecord:
    logger.info("frame skipped", extra={"frame_index": frame_index, "reason": reason})
    return FrameRecord(frame_index=frame_index, skip_reason=reason)


def generate_frame(config: SceneConfig, res: SceneResources, frame_index: int, out_dir,
                   render_workers: int = 1) -> FrameRecord:
    """Sample, render and write one frame. Skipped frames write nothing."""
    spec = sample_scene(config, frame_index, res)
    logger.debug("scene sampled", extra={"frame_index": frame_index, "scene": spec.to_dict()})
    frame = compose_frame(config, res, spec, render_workers=render_workers)
    if frame.skip_reason:
        return _skip(frame_index, frame.skip_reason)

    annotation = extract_annotation(frame.buffers, spec, res.atlas, config.n_points,
                                    keypoints=frame.keypoints, keypoints_3d=frame.keypoints_3d)
    if annotation is None:
        return FrameRecord(frame_index=frame_index, skip_reason=SKIP_EMPTY)
    if spec.occluders:
        annotation = update_labels_for_occlusion(annotation, frame.occlusion_alpha, config.occlusion.threshold,
                                                 enabled=config.occlusion_aware_labels)
        if annotation.area == 0 or annotation.num_points == 0:
            return _skip(frame_index, SKIP_OCCLUDED)

    out = Path(out_dir)
    paths = frame.buffers.save(out, f"{frame_index:06d}", sixteen_bit_iuv=config.iuv_16bit)
    rel = {key: path.relative_to(out).as_posix() for key, path in paths.items()}
    image = CocoImage(
        id=frame_index + 1, file_name=rel["rgb"], width=frame.camera.width, height=frame.camera.height,
        frame_index=frame_index, camera_id=spec.camera_id,
        iuv_file=rel["iuv"], seg_file=rel["seg"], depth_file=rel["depth"],
    )
    return FrameRecord(frame_index=frame_index, image=image, annotation=annotation, files=sorted(rel.values()))


_WORKER_STATE: dict = {}


def _init_worker(config: SceneConfig) -> None:
    _WORKER_STATE["config"] = config
    _WORKER_STATE["resources"] = load_resources(config)


def _generate_in_worker(frame_index: int, out_dir: str) -> FrameRecord:
    return generate_frame(_WORKER_STATE["config"], _WORKER_STATE["resources"], frame_index, out_dir)


def _run_frames(config: SceneConfig, res: SceneResources, frames: list[int], out: Path,
                progress: bool) -> list[FrameRecord]:
    bar = tqdm(total=len(frames), desc="frames", unit="frame", disable=not progress)
    records = []
    try:
        if config.workers == 1:
            for index in frames:
                records.append(generate_frame(config, res, index, out))
                bar.update(1)
            return records

        pool = ProcessPoolExecutor(max_workers=config.workers, initializer=_init_worker, initargs=(config,))
        try:
            futures = [pool.submit(_generate_in_worker, index, str(out)) for index in frames]
            for future in as_completed(futures):
                records.append(future.result())
                bar.update(1)
        except BaseException:
            pool.shutdown(wait=True, cancel_futures=True)
            raise
        pool.shutdown(wait=True)
        return records
    finally:
        bar.close()


def default_category(model: BodyModel) -> CocoCategory:
    """Person category carrying the model's joint names and bone list (1-based)."""
    return CocoCategory(
        keypoints=list(model.joint_names),
        skeleton=[[j + 1, p + 1] for j, p in enumerate(model.parents) if p >= 0],
    )


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(config: SceneConfig, out_dir, frames: Sequence[int], records: Sequence[FrameRecord]) -> dict:
    """Checksums of every written file plus the resolved config; worker count is left out."""
    out = Path(out_dir)
    names = sorted({name for record in records for name in record.files} | {ANNOTATIONS_NAME})
    return {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "config": config.model_dump(mode="json", exclude={"workers"}),
        "frames": {
            "start": min(frames) if frames else 0,
            "stop": max(frames) + 1 if frames else 0,
            "generated": sum(1 for r in records if r.skip_reason is None),
            "skipped": [{"frame_index": r.frame_index, "reason": r.skip_reason}
                        for r in records if r.skip_reason is not None],
        },
        "files": {name: sha256_file(out / name) for name in names},
    }


@dataclass
class GenerationSummary:
    out_dir: Path
    generated: int
    skipped: list[tuple[int, str]]
    manifest: dict


def generate_dataset(config: SceneConfig, out_dir, frame_indices: Optional[Iterable[int]] = None,
                     progress: bool = True) -> GenerationSummary:
    """
    Generate frames, then write annotations.json and manifest.json.

    Resources are validated before anything is written. Both JSON files are
    written atomically after every frame finished, so an interrupted run
    never leaves a partial annotations.json.
    """
    frames = sorted(frame_indices) if frame_indices is not None else list(range(config.num_frames))
    bad = [i for i in frames if not 0 <= i < config.num_frames]
    if bad:
        raise FrameRangeError(f"frame {bad[0]} outside 0..{config.num_frames - 1}")
    res = load_resources(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    records = sorted(_run_frames(config, res, frames, out, progress), key=lambda r: r.frame_index)
    images = [r.image for r in records if r.image is not None]
    annotations = [r.annotation for r in records if r.annotation is not None]
    first_model = res.models[config.gender_tags[0]]
    write_coco(annotations, images, out / ANNOTATIONS_NAME, categories=[default_category(first_model)])

    manifest = build_manifest(config, out, frames, records)
    write_text_atomic(out / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    skipped = [(r.frame_index, r.skip_reason) for r in records if r.skip_reason is not None]
    logger.info("dataset written", extra={"out_dir": str(out), "generated": len(annotations),
                                          "skipped": len(skipped)})
    return GenerationSummary(out_dir=out, generated=len(annotations), skipped=skipped, manifest=manifest)


# COCO interchange

def write_coco(annotations: Sequence[DenseAnnotation], images: Sequence[CocoImage], path,
               categories: Optional[Sequence[CocoCategory]] = None) -> Path:
    """
    Write a COCO-DensePose JSON file atomically.

    Floats are written as stored; annotations built by this module hold
    values rounded to 6 significant digits, so the text round-trips exactly.
    """
    dataset = CocoDataset(images=list(images), annotations=list(annotations),
                          categories=list(categories) if categories else [CocoCategory()])
    text = json.dumps(dataset.model_dump(mode="json", exclude_none=True), separators=(",", ":"))
    write_text_atomic(path, text + "\n")
    return Path(path)


def _key_path(loc) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def read_coco(path) -> CocoDataset:
    file_path = Path(path)
    if not file_path.is_file():
        raise ResourceError(f"missing file: {file_path}")
    try:
        doc = json.loads(file_path.read_text())
    except json.JSONDecodeError as exc:
        raise CocoFormatError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})",
                              key_path="<root>") from exc
    if not isinstance(doc, dict):
        raise CocoFormatError("expected a JSON object with images/annotations/categories", key_path="<root>")
    try:
        return CocoDataset.model_validate(doc)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise CocoFormatError(first["msg"], key_path=_key_path(first["loc"])) from exc


# Preview

def overlay_parts(rgb: np.ndarray, part_seg: np.ndarray, points: Optional[tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """Blend part colors over foreground pixels; sampled points (rows, cols) are drawn white."""
    palette = np.asarray(SEG_PALETTE, dtype=np.float64) / 255.0
    out = np.asarray(rgb, dtype=np.float64).copy()
    fg = part_seg > 0
    out[fg] = (1.0 - PREVIEW_BLEND) * out[fg] + PREVIEW_BLEND * palette[part_seg[fg]]
    if points is not None:
        rows, cols = points
        on_body = fg[rows, cols]
        out[rows[on_body], cols[on_body]] = 1.0
    return out


def render_preview(config: SceneConfig, frame_index: int,
                   resources: Optional[SceneResources] = None) -> tuple[np.ndarray, ComposedFrame]:
    """Noise-free frame with part colors and sampled IUV points overlaid. Writes nothing."""
    if not 0 <= frame_index < config.num_frames:
        raise FrameRangeError(f"frame {frame_index} outside 0..{config.num_frames - 1}")
    res = resources or load_resources(config)
    spec = sample_scene(config, frame_index, res)
    frame = compose_frame(config, res, spec, add_noise=False, render_workers=config.workers)
    points = None
    if frame.buffers.instance_mask.any():
        points = _sample_pixels(frame.buffers.instance_mask, spec, config.n_points)
    return overlay_parts(frame.buffers.rgb, frame.buffers.part_seg, points), frame


# Packaging

def read_manifest(out_dir) -> dict:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.is_file():
        raise ResourceError(f"missing file: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ResourceError(f"{path}: not a {MANIFEST_FORMAT} manifest")
    return manifest


def package_dataset(out_dir, post_rgb_dir) -> list[str]:
    """
    Swap in externally post-processed RGB frames.

    Label files and annotations.json must still match their manifest
    checksums; a replacement must keep the original image size. Returns the
    replaced image names and rewrites the manifest.
    """
    out, post = Path(out_dir), Path(post_rgb_dir)
    if not post.is_dir():
        raise ResourceError(f"missing post-processed RGB directory: {post}")
    manifest = read_manifest(out)
    files = manifest["files"]

    drifted = [name for name, digest in sorted(files.items())
               if not name.startswith("images/") and (not (out / name).is_file() or sha256_file(out / name) != digest)]
    if drifted:
        raise ManifestDriftError(f"label files changed since generation: {', '.join(drifted[:5])}"
                                 + (f" (+{len(drifted) - 5} more)" if len(drifted) > 5 else ""))

    replaced = []
    for name in sorted(n for n in files if n.startswith("images/")):
        source = post / Path(name).name
        if not source.is_file():
            continue
        original, candidate = load_rgb(out / name), load_rgb(source)
        if original.shape != candidate.shape:
            raise DimensionError(f"{source.name}: {candidate.shape[1]}x{candidate.shape[0]}, "
                                 f"expected {original.shape[1]}x{original.shape[0]}")
        with atomic_path(out / name) as tmp:
            shutil.copyfile(source, tmp)
        files[name] = sha256_file(out / name)
        replaced.append(name)

    manifest["post_rgb"] = {"source": str(post.resolve()), "replaced": len(replaced)}
    write_text_atomic(out / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info("dataset packaged", extra={"out_dir": str(out), "replaced": len(replaced)})
    return replaced
