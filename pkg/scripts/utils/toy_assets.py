"""
A complete toy resource set: two gender-tagged toy biped containers, their
atlas, procedural textures, backgrounds, occluder sprites, a looping walk
clip, a retarget map and a scene config that ties them together.
"""

import json
import logging
import math
from pathlib import Path

import numpy as np

from atlas import make_toy_atlas, part_layout, save_atlas
from body_model import BodyModel, make_toy_biped, save_body_model
from image_io import save_rgb, save_rgba, write_text_atomic
from mocap import MotionClip, RetargetMap, serialize_bvh

logger = logging.getLogger(__name__)

TOY_GENDERS = {"female": 0.09, "male": 0.1}   # tag -> limb radius
TOY_SEGMENTS = 8
TEXTURE_TILE = 32
TEXTURES_PER_GENDER = 3
NUM_BACKGROUNDS = 4
WALK_FRAMES = 32
WALK_FRAME_TIME = 1.0 / 30.0

# Parts left bare (head, hands, feet)
_SKIN_PARTS = (2, 3, 4, 5, 14)

_ROOT_CHANNELS = ("Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation")
_JOINT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")


def toy_texture(rng: np.random.Generator, chart_to_part: dict[int, int], tile: int = TEXTURE_TILE) -> np.ndarray:
    """Chart-packed texture: one skin tone, two garment colors with stripes."""
    layout = part_layout(tile, chart_to_part)
    skin = rng.uniform([0.55, 0.35, 0.25], [0.95, 0.75, 0.6])
    shirt, trousers = rng.uniform(0.1, 0.9, size=(2, 3))
    colors = np.zeros((15, 3))
    colors[1], colors[10:14] = shirt, shirt
    colors[6:10] = trousers
    for part in _SKIN_PARTS:
        colors[part] = skin

    height, width = layout.shape
    ys, xs = np.mgrid[0:height, 0:width]
    period = rng.uniform(4.0, 10.0)
    stripes = 0.85 + 0.15 * np.sign(np.sin(2.0 * math.pi * (xs + ys) / period))
    texture = colors[layout] * np.where(np.isin(layout, _SKIN_PARTS), 1.0, stripes)[..., None]
    return np.clip(texture, 0.0, 1.0)


def toy_background(rng: np.random.Generator, width: int = 160, height: int = 120) -> np.ndarray:
    """Vertical gradient with a few soft blobs."""
    top, bottom = rng.uniform(0.2, 0.9, size=(2, 3))
    t = np.linspace(0.0, 1.0, height)[:, None, None]
    image = np.broadcast_to((1.0 - t) * top + t * bottom, (height, width, 3)).copy()
    ys, xs = np.mgrid[0:height, 0:width]
    for _ in range(5):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        radius = rng.uniform(8.0, 30.0)
        weight = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * radius ** 2))[..., None]
        image = (1.0 - 0.6 * weight) * image + 0.6 * weight * rng.uniform(0.0, 1.0, size=3)
    return np.clip(image, 0.0, 1.0)


def toy_occluders(size: int = 64) -> dict[str, np.ndarray]:
    """Three RGBA sprites with hard alpha: disc, bar, ring."""
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    r = np.hypot(xs - size / 2.0, ys - size / 2.0)
    shapes = {
        "disc": (r < size * 0.45, (0.8, 0.2, 0.2)),
        "bar": ((np.abs(xs - size / 2.0) < size * 0.45) & (np.abs(ys - size / 2.0) < size * 0.15), (0.2, 0.3, 0.8)),
        "ring": ((r < size * 0.45) & (r > size * 0.25), (0.9, 0.8, 0.2)),
    }
    sprites = {}
    for name, (mask, color) in shapes.items():
        rgba = np.zeros((size, size, 4))
        rgba[..., :3] = color
        rgba[..., 3] = mask
        sprites[name] = rgba
    return sprites


def toy_walk_clip(model: BodyModel, num_frames: int = WALK_FRAMES, frame_time: float = WALK_FRAME_TIME) -> MotionClip:
    """
    A loopable in-place walk for the toy skeleton.

    Arms start in T-pose along +-x and are lowered about z; hips and
    shoulders swing in antiphase. The last frame leads back into the first.
    """
    rest = model.rest_joints(model.template_vertices)
    names = model.joint_names
    offsets = np.array([rest[j] - rest[p] if p >= 0 else rest[j] for j, p in enumerate(model.parents)])
    index = {name: j for j, name in enumerate(names)}

    channels = tuple(_ROOT_CHANNELS if p < 0 else _JOINT_CHANNELS for p in model.parents)
    starts = np.cumsum([0] + [len(c) for c in channels])
    frames = np.zeros((num_frames, int(starts[-1])))

    def set_zxy(row: np.ndarray, joint: str, z: float = 0.0, x: float = 0.0, y: float = 0.0) -> None:
        j = index[joint]
        base = starts[j] + (3 if model.parents[j] < 0 else 0)
        row[base:base + 3] = (z, x, y)

    for k in range(num_frames):
        phase = 2.0 * math.pi * k / num_frames
        swing = math.sin(phase)
        row = frames[k]
        row[0:3] = rest[0] + (0.0, 0.015 * abs(math.cos(phase)), 0.0)
        set_zxy(row, "pelvis", y=5.0 * swing)
        set_zxy(row, "chest", y=-4.0 * swing)
        set_zxy(row, "neck", x=3.0 * math.sin(2.0 * phase))
        set_zxy(row, "left_hip", x=-25.0 * swing)
        set_zxy(row, "right_hip", x=25.0 * swing)
        set_zxy(row, "left_knee", x=35.0 * max(0.0, math.sin(phase + 0.5 * math.pi)))
        set_zxy(row, "right_knee", x=35.0 * max(0.0, -math.sin(phase + 0.5 * math.pi)))
        set_zxy(row, "left_shoulder", z=-70.0, y=20.0 * swing)
        set_zxy(row, "right_shoulder", z=70.0, y=20.0 * swing)
        set_zxy(row, "left_elbow", y=-15.0)
        set_zxy(row, "right_elbow", y=15.0)

    return MotionClip(joint_names=tuple(names), parents=tuple(model.parents), offsets=offsets,
                      channels=channels, frame_time=frame_time, frames=frames)


def write_toy_resources(root, num_frames: int = 50, master_seed: int = 0) -> Path:
    """Write the toy resource set under root; returns the scene config path."""
    out = Path(root)
    rng = np.random.default_rng(master_seed)
    atlas = make_toy_atlas(TOY_SEGMENTS)
    save_atlas(atlas, out / "atlas")

    models = {}
    for tag, radius in TOY_GENDERS.items():
        model = make_toy_biped(TOY_SEGMENTS, radius, gender_tag=tag)
        save_body_model(model, out / "models" / tag)
        models[tag] = model
        for k in range(TEXTURES_PER_GENDER):
            save_rgb(out / "textures" / tag / f"texture_{k:02d}.png", toy_texture(rng, atlas.chart_to_part))

    for k in range(NUM_BACKGROUNDS):
        save_rgb(out / "backgrounds" / f"background_{k:02d}.png", toy_background(rng))
    for name, rgba in toy_occluders().items():
        save_rgba(out / "occluders" / f"{name}.png", rgba)

    reference = models[next(iter(TOY_GENDERS))]
    clip = toy_walk_clip(reference)
    write_text_atomic(out / "clips" / "walk.bvh", serialize_bvh(clip))
    retarget = RetargetMap.identity(list(clip.joint_names))
    write_text_atomic(out / "retarget.json", retarget.model_dump_json(indent=2) + "\n")

    scene = {
        "master_seed": master_seed,
        "num_frames": num_frames,
        "models": {tag: f"models/{tag}" for tag in TOY_GENDERS},
        "atlas": "atlas",
        "backgrounds": "backgrounds",
        "textures": {tag: f"textures/{tag}" for tag in TOY_GENDERS},
        "occluders": "occluders",
        "clips": ["clips/walk.bvh"],
        "retarget_map": "retarget.json",
        "rig_ranges": {"num_cameras": 5, "width": 160, "height": 120, "focal_range": [110.0, 160.0],
                       "k1_range": [-0.1, 0.05], "yaw_spread_deg": 45.0},
        "avatar": {"depth_range": [3.0, 3.8], "lateral_fraction": 0.15},
    }
    config_path = out / "scene.json"
    write_text_atomic(config_path, json.dumps(scene, indent=2) + "\n")
    logger.info("toy resources written", extra={"root": str(out), "frames": num_frames})
    return config_path
