"""
BVH motion clips and retargeting onto body-model poses.

Supported subset: ROOT/JOINT/End Site hierarchies with Xposition/Yposition/
Zposition and Euler rotation channels in XYZ, ZXY or ZYX order (degrees,
intrinsic, applied in the order listed).
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation, Slerp

from body_model import PoseParams
from errors import (
    BvhSyntaxError,
    ChannelCountError,
    FrameRangeError,
    MissingFileError,
    MotionError,
    ParameterError,
    UnsupportedChannelError,
)

logger = logging.getLogger(__name__)

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
SUPPORTED_EULER_ORDERS = ("XYZ", "ZXY", "ZYX")


@dataclass(frozen=True, eq=False)
class MotionClip:
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    offsets: np.ndarray                      # (J, 3) rest offsets from parent
    channels: tuple[tuple[str, ...], ...]    # per joint, file order
    frame_time: float
    frames: np.ndarray                       # (N, C) channel values
    end_sites: tuple[tuple[int, tuple[float, float, float]], ...] = ()

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_channels(self) -> int:
        return sum(len(c) for c in self.channels)

    @property
    def duration(self) -> float:
        return max(self.num_frames - 1, 0) * self.frame_time

    def channel_offset(self, joint: int) -> int:
        return sum(len(c) for c in self.channels[:joint])

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def euler_order(self, joint: int) -> str:
        return "".join(c[0] for c in self.channels[joint] if c in ROTATION_CHANNELS)

    def joint_rotation(self, frame: int, joint: int) -> Rotation:
        start = self.channel_offset(joint)
        names = self.channels[joint]
        angles = [self.frames[frame, start + k] for k, c in enumerate(names) if c in ROTATION_CHANNELS]
        order = self.euler_order(joint)
        if not order:
            return Rotation.identity()
        return Rotation.from_euler(order, angles, degrees=True)

    def joint_position(self, frame: int, joint: int) -> Optional[np.ndarray]:
        start = self.channel_offset(joint)
        names = self.channels[joint]
        if not any(c in POSITION_CHANNELS for c in names):
            return None
        pos = np.zeros(3)
        for k, c in enumerate(names):
            if c in POSITION_CHANNELS:
                pos[POSITION_CHANNELS.index(c)] = self.frames[frame, start + k]
        return pos


# Parsing

class _Tokens:
    def __init__(self, lines: list[str]):
        self.items = [(tok, n) for n, line in enumerate(lines, start=1) for tok in line.split()]
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.items[self.pos][0] if self.pos < len(self.items) else None

    @property
    def line(self) -> Optional[int]:
        if self.pos < len(self.items):
            return self.items[self.pos][1]
        return self.items[-1][1] if self.items else None

    def take(self, expected: Optional[str] = None) -> str:
        if self.pos >= len(self.items):
            raise BvhSyntaxError(f"unexpected end of file{f', expected {expected}' if expected else ''}", self.line)
        tok, n = self.items[self.pos]
        if expected is not None and tok != expected:
            raise BvhSyntaxError(f"expected '{expected}', found '{tok}'", n)
        self.pos += 1
        return tok

    def number(self) -> float:
        line = self.line
        tok = self.take()
        try:
            return float(tok)
        except ValueError:
            raise BvhSyntaxError(f"expected a number, found '{tok}'", line) from None


def _check_channels(names: Sequence[str], line: Optional[int]) -> None:
    for name in names:
        if name not in POSITION_CHANNELS and name not in ROTATION_CHANNELS:
            raise UnsupportedChannelError(f"line {line}: unsupported channel '{name}'")
    order = "".join(c[0] for c in names if c in ROTATION_CHANNELS)
    if order and order not in SUPPORTED_EULER_ORDERS:
        raise UnsupportedChannelError(f"line {line}: rotation order {order} not supported "
                                      f"(expected one of {', '.join(SUPPORTED_EULER_ORDERS)})")


def parse_bvh(text: str) -> MotionClip:
    """Parse BVH text into a MotionClip."""
    lines = text.splitlines()
    try:
        motion_at = next(i for i, line in enumerate(lines) if line.strip() == "MOTION")
    except StopIteration:
        raise BvhSyntaxError("missing MOTION section", len(lines) or None) from None

    tokens = _Tokens(lines[:motion_at])
    tokens.take("HIERARCHY")
    names, parents, offsets, channels, end_sites = [], [], [], [], []

    def parse_joint(parent: int) -> None:
        kind_line = tokens.line
        kind = tokens.take()
        if kind not in ("ROOT", "JOINT"):
            raise BvhSyntaxError(f"expected ROOT or JOINT, found '{kind}'", kind_line)
        index = len(names)
        names.append(tokens.take())
        parents.append(parent)
        tokens.take("{")
        tokens.take("OFFSET")
        offsets.append([tokens.number() for _ in range(3)])
        joint_channels: list[str] = []
        if tokens.peek() == "CHANNELS":
            tokens.take()
            count_line = tokens.line
            count = tokens.number()
            if count != int(count) or count < 0:
                raise BvhSyntaxError(f"bad channel count {count}", count_line)
            joint_channels = [tokens.take() for _ in range(int(count))]
            _check_channels(joint_channels, count_line)
        channels.append(tuple(joint_channels))
        while tokens.peek() != "}":
            if tokens.peek() == "End":
                tokens.take()
                tokens.take("Site")
                tokens.take("{")
                tokens.take("OFFSET")
                end_sites.append((index, tuple(tokens.number() for _ in range(3))))
                tokens.take("}")
            else:
                parse_joint(index)
        tokens.take("}")

    parse_joint(-1)
    if tokens.peek() is not None:
        raise BvhSyntaxError(f"unexpected '{tokens.peek()}' after hierarchy", tokens.line)

    num_channels = sum(len(c) for c in channels)
    frames, frame_time = _parse_motion(lines, motion_at, num_channels)
    frames.setflags(write=False)
    offsets_arr = np.asarray(offsets, dtype=np.float64)
    offsets_arr.setflags(write=False)
    clip = MotionClip(
        joint_names=tuple(names), parents=tuple(parents), offsets=offsets_arr,
        channels=tuple(channels), frame_time=frame_time, frames=frames, end_sites=tuple(end_sites),
    )
    logger.debug("parsed bvh", extra={"joints": len(names), "frames": clip.num_frames})
    return clip


def _parse_motion(lines: list[str], motion_at: int, num_channels: int) -> tuple[np.ndarray, float]:
    body = [(n, line.strip()) for n, line in enumerate(lines[motion_at + 1:], start=motion_at + 2) if line.strip()]
    if len(body) < 2:
        raise BvhSyntaxError("MOTION needs 'Frames:' and 'Frame Time:' lines", motion_at + 1)

    (frames_line, frames_text), (time_line, time_text) = body[0], body[1]
    if not frames_text.startswith("Frames:"):
        raise BvhSyntaxError("expected 'Frames:'", frames_line)
    if not time_text.startswith("Frame Time:"):
        raise BvhSyntaxError("expected 'Frame Time:'", time_line)
    try:
        num_frames = int(frames_text.split(":", 1)[1])
        frame_time = float(time_text.split(":", 1)[1])
    except ValueError:
        raise BvhSyntaxError("malformed frame header", frames_line) from None
    if num_frames < 0:
        raise BvhSyntaxError(f"negative frame count {num_frames}", frames_line)
    if not frame_time > 0:
        raise BvhSyntaxError(f"frame time must be positive, got {frame_time}", time_line)

    rows = body[2:]
    if len(rows) != num_frames:
        raise BvhSyntaxError(f"header declares {num_frames} frames, found {len(rows)}", frames_line)
    frames = np.zeros((num_frames, num_channels))
    for index, (line_no, text) in enumerate(rows):
        parts = text.split()
        if len(parts) != num_channels:
            raise ChannelCountError(f"expected {num_channels} values, found {len(parts)}", frame=index)
        try:
            frames[index] = [float(p) for p in parts]
        except ValueError:
            raise BvhSyntaxError("non-numeric channel value", line_no) from None
    return frames, frame_time


def load_bvh(path) -> MotionClip:
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"missing file: {file_path}")
    return parse_bvh(file_path.read_text())


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def serialize_bvh(clip: MotionClip) -> str:
    """Write a clip back to BVH text; numbers use 6 significant digits."""
    children: dict[int, list[int]] = {j: [] for j in range(len(clip.joint_names))}
    for j, parent in enumerate(clip.parents):
        if parent >= 0:
            children[parent].append(j)
    sites: dict[int, list[tuple]] = {}
    for joint, offset in clip.end_sites:
        sites.setdefault(joint, []).append(offset)

    out = ["HIERARCHY"]

    def write(joint: int, depth: int) -> None:
        pad = "  " * depth
        out.append(f"{pad}{'ROOT' if clip.parents[joint] < 0 else 'JOINT'} {clip.joint_names[joint]}")
        out.append(f"{pad}{{")
        out.append(f"{pad}  OFFSET {' '.join(_fmt(v) for v in clip.offsets[joint])}")
        if clip.channels[joint]:
            out.append(f"{pad}  CHANNELS {len(clip.channels[joint])} {' '.join(clip.channels[joint])}")
        for child in children[joint]:
            write(child, depth + 1)
        for offset in sites.get(joint, []):
            out.append(f"{pad}  End Site")
            out.append(f"{pad}  {{")
            out.append(f"{pad}    OFFSET {' '.join(_fmt(v) for v in offset)}")
            out.append(f"{pad}  }}")
        out.append(f"{pad}}}")

    for root, parent in enumerate(clip.parents):
        if parent < 0:
            write(root, 0)
    out.append("MOTION")
    out.append(f"Frames: {clip.num_frames}")
    out.append(f"Frame Time: {_fmt(clip.frame_time)}")
    for row in clip.frames:
        out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


# Retargeting

class RetargetEntry(BaseModel):
    """One source joint driving one model joint."""
    source: str
    target: int = Field(..., ge=0)
    axes: tuple[int, int, int] = (0, 1, 2)
    signs: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @field_validator("axes")
    @classmethod
    def _permutation(cls, value: tuple[int, int, int]) -> tuple[int, int, int]:
        if sorted(value) != [0, 1, 2]:
            raise ValueError(f"axes must be a permutation of (0, 1, 2), got {value}")
        return value

    @field_validator("signs")
    @classmethod
    def _unit_signs(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(s not in (-1.0, 1.0) for s in value):
            raise ValueError(f"signs must be +1 or -1, got {value}")
        return value

    def axis_matrix(self) -> np.ndarray:
        """Signed permutation taking source axes to model axes."""
        mat = np.zeros((3, 3))
        for row, (axis, sign) in enumerate(zip(self.axes, self.signs)):
            mat[row, axis] = sign
        return mat


class RetargetMap(BaseModel):
    entries: list[RetargetEntry] = Field(default_factory=list)
    # Joint whose position channels drive root translation
    translation_source: Optional[str] = None
    translation_scale: float = 1.0

    @model_validator(mode="after")
    def _unique_targets(self) -> "RetargetMap":
        targets = [e.target for e in self.entries]
        if len(targets) != len(set(targets)):
            raise ValueError("retarget targets must be unique")
        return self

    def check_joints(self, num_joints: int) -> None:
        bad = [e.target for e in self.entries if e.target >= num_joints]
        if bad:
            raise ParameterError(f"retarget targets {bad} out of range for {num_joints} joints")

    @classmethod
    def identity(cls, joint_names: Sequence[str]) -> "RetargetMap":
        """Map clip joint k to model joint k."""
        return cls(entries=[RetargetEntry(source=name, target=k) for k, name in enumerate(joint_names)],
                   translation_source=joint_names[0] if joint_names else None)

    @classmethod
    def by_name(cls, clip_names: Sequence[str], model_names: Sequence[str]) -> "RetargetMap":
        """Map every clip joint whose name the model also uses."""
        entries = [RetargetEntry(source=name, target=list(model_names).index(name))
                   for name in clip_names if name in model_names]
        return cls(entries=entries, translation_source=clip_names[0] if clip_names else None)


def load_retarget_map(path) -> RetargetMap:
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"missing file: {file_path}")
    return RetargetMap.model_validate(json.loads(file_path.read_text()))


def retarget(clip: MotionClip, frame_index: int, rmap: RetargetMap, num_joints: int) -> PoseParams:
    """Convert one clip frame into model pose parameters. Unmapped model joints stay at identity."""
    if not 0 <= frame_index < clip.num_frames:
        raise FrameRangeError(f"frame {frame_index} out of range (clip has {clip.num_frames} frames)")
    rmap.check_joints(num_joints)

    rotations = np.zeros((num_joints, 3))
    for entry in rmap.entries:
        if entry.source not in clip.joint_names:
            continue
        matrix = clip.joint_rotation(frame_index, clip.joint_index(entry.source)).as_matrix()
        axes = entry.axis_matrix()
        rotations[entry.target] = Rotation.from_matrix(axes @ matrix @ axes.T).as_rotvec()

    translation = np.zeros(3)
    if rmap.translation_source and rmap.translation_source in clip.joint_names:
        position = clip.joint_position(frame_index, clip.joint_index(rmap.translation_source))
        if position is not None:
            entry = next((e for e in rmap.entries if e.source == rmap.translation_source), None)
            axes = entry.axis_matrix() if entry is not None else np.eye(3)
            translation = axes @ position * rmap.translation_scale
    return PoseParams(rotations, translation)


def retarget_clip(clip: MotionClip, rmap: RetargetMap, num_joints: int) -> list[PoseParams]:
    return [retarget(clip, k, rmap, num_joints) for k in range(clip.num_frames)]


def sample_pose(poses: Sequence[PoseParams], t_seconds: float, frame_time: float) -> PoseParams:
    """
    Pose at time t: slerp per joint between bracketing frames, translation
    interpolated linearly. Times outside the clip clamp to its ends.
    """
    if not poses:
        raise MotionError("cannot sample an empty pose sequence")
    if not frame_time > 0:
        raise ParameterError(f"frame_time must be positive, got {frame_time}")
    position = min(max(t_seconds / frame_time, 0.0), len(poses) - 1.0)
    k = int(math.floor(position))
    alpha = position - k
    if alpha == 0.0 or k >= len(poses) - 1:
        return poses[min(k, len(poses) - 1)]

    a, b = poses[k], poses[k + 1]
    rotations = np.empty_like(a.joint_rotations)
    for j in range(a.num_joints):
        pair = Rotation.from_rotvec(np.stack([a.joint_rotations[j], b.joint_rotations[j]]))
        rotations[j] = Slerp([0.0, 1.0], pair)([alpha]).as_rotvec()[0]
    translation = (1.0 - alpha) * a.root_translation + alpha * b.root_translation
    return PoseParams(rotations, translation)
