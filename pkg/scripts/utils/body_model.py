"""
Parametric articulated body model.

Shape blend-shapes, forward kinematics over a rooted joint tree and linear
blend skinning, plus the on-disk container (model.json + raw little-endian
arrays) and the checks that guard it.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial.transform import Rotation

from errors import (
    DimensionError,
    DimensionMismatchError,
    InvalidModelError,
    KinematicCycleError,
    MissingFileError,
    ParameterError,
    WeightsNotNormalizedError,
)
from toy_biped import build_toy_biped

logger = logging.getLogger(__name__)

CONTAINER_FORMAT = "corrgen-body-model"
CONTAINER_VERSION = 1
MANIFEST_NAME = "model.json"

WEIGHT_TOLERANCE = 1e-6
REGRESSOR_TOLERANCE = 1e-5
DEFAULT_BETA_CLAMP = 5.0

_DTYPES = {"f32": "<f4", "i32": "<i4"}
_ARRAY_FILES = {
    "template": ("template.f32", "f32"),
    "faces": ("faces.i32", "i32"),
    "shape_dirs": ("shape_dirs.f32", "f32"),
    "pose_dirs": ("pose_dirs.f32", "f32"),
    "joint_regressor": ("joint_regressor.f32", "f32"),
    "skin_weights": ("skin_weights.f32", "f32"),
}
_REQUIRED_ARRAYS = ("template", "faces", "shape_dirs", "joint_regressor", "skin_weights")


def _readonly(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BodyModel:
    """Immutable body model; safe to share across workers."""
    template_vertices: np.ndarray          # (V, 3)
    faces: np.ndarray                      # (F, 3)
    shape_dirs: np.ndarray                 # (V, 3, K)
    pose_dirs: Optional[np.ndarray]        # (V, 3, 9 * (J - 1)) or None
    joint_regressor: sparse.csr_matrix     # (J, V)
    skin_weights: np.ndarray               # (V, J)
    parents: tuple[int, ...]
    gender_tag: str = "neutral"
    joint_names: tuple[str, ...] = ()

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def num_shapes(self) -> int:
        return self.shape_dirs.shape[2]

    def joint_order(self) -> list[int]:
        return joint_order(self.parents)

    def rest_joints(self, shaped_vertices: np.ndarray) -> np.ndarray:
        """Regress rest joint locations (J, 3) from shaped vertices."""
        return np.asarray(self.joint_regressor @ shaped_vertices)


@dataclass(frozen=True, eq=False)
class ShapeParams:
    beta: np.ndarray
    clamp: float = DEFAULT_BETA_CLAMP

    def __post_init__(self):
        beta = _readonly(self.beta, np.float64).reshape(-1)
        if not np.all(np.isfinite(beta)):
            raise ParameterError("shape coefficients must be finite")
        if beta.size and np.max(np.abs(beta)) > self.clamp:
            raise ParameterError(f"shape coefficient magnitude {np.max(np.abs(beta)):.3f} exceeds clamp {self.clamp}")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def zeros(cls, num_shapes: int) -> "ShapeParams":
        return cls(np.zeros(num_shapes))


@dataclass(frozen=True, eq=False)
class PoseParams:
    """Axis-angle rotation per joint plus root translation."""
    joint_rotations: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotations = np.array(self.joint_rotations, dtype=np.float64, copy=True)
        translation = np.array(self.root_translation, dtype=np.float64, copy=True).reshape(-1)
        if rotations.ndim != 2 or rotations.shape[1] != 3:
            raise ParameterError(f"joint_rotations must be (J, 3), got {rotations.shape}")
        if translation.shape != (3,):
            raise ParameterError(f"root_translation must be a 3-vector, got {translation.shape}")
        if not (np.all(np.isfinite(rotations)) and np.all(np.isfinite(translation))):
            raise ParameterError("pose parameters must be finite")

        # Canonicalize so every angle is below 2*pi
        angles = np.linalg.norm(rotations, axis=1)
        wrap = angles >= 2.0 * math.pi
        if np.any(wrap):
            wrapped = np.mod(angles[wrap], 2.0 * math.pi)
            rotations[wrap] *= (wrapped / angles[wrap])[:, None]

        rotations.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "joint_rotations", rotations)
        object.__setattr__(self, "root_translation", translation)

    @classmethod
    def identity(cls, num_joints: int) -> "PoseParams":
        return cls(np.zeros((num_joints, 3)), np.zeros(3))

    @property
    def num_joints(self) -> int:
        return self.joint_rotations.shape[0]


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Output of forward kinematics."""
    rest_joints: np.ndarray             # (J, 3)
    skinning_transforms: np.ndarray     # (J, 4, 4), world(posed) * world(rest)^-1
    world_transforms: np.ndarray        # (J, 4, 4), joint frame to world

    @property
    def posed_joints(self) -> np.ndarray:
        return self.world_transforms[:, :3, 3]


@dataclass(frozen=True, eq=False)
class PosedMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one container check."""
    name: str
    passed: bool
    detail: str = ""
    error_cls: Optional[type] = None


# Kinematic tree

def joint_order(parents: Sequence[int]) -> list[int]:
    """Parents-before-children ordering; raises KinematicCycleError on cycles."""
    n = len(parents)
    children: dict[int, list[int]] = {j: [] for j in range(-1, n)}
    for j, parent in enumerate(parents):
        children[int(parent) if parent >= 0 else -1].append(j)

    order, stack = [], list(reversed(children[-1]))
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    if len(order) != n:
        stuck = sorted(set(range(n)) - set(order))
        raise KinematicCycleError(f"kinematic cycle through joints {stuck}")
    return order


# Shape, kinematics, skinning

def apply_shape(model: BodyModel, shape: ShapeParams) -> np.ndarray:
    """Template plus shape blend-shapes, (V, 3)."""
    if shape.beta.shape[0] != model.num_shapes:
        raise DimensionError(f"beta has {shape.beta.shape[0]} components, model has {model.num_shapes}")
    return model.template_vertices + model.shape_dirs @ shape.beta


def _rigid(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    mat = np.eye(4)
    mat[:3, :3] = rotation
    mat[:3, 3] = translation
    return mat


def forward_kinematics(model: BodyModel, shaped_vertices: np.ndarray, pose: PoseParams) -> Skeleton:
    """
    Compose per-joint transforms root to leaf.

    Each joint rotates about its own rest location; the root is additionally
    translated by the pose's root translation.
    """
    if pose.num_joints != model.num_joints:
        raise DimensionError(f"pose has {pose.num_joints} joints, model has {model.num_joints}")
    rest = model.rest_joints(shaped_vertices)
    rotations = Rotation.from_rotvec(np.array(pose.joint_rotations)).as_matrix()

    skinning = np.zeros((model.num_joints, 4, 4))
    for j in model.joint_order():
        local = _rigid(rotations[j], rest[j] - rotations[j] @ rest[j])
        parent = model.parents[j]
        if parent < 0:
            skinning[j] = _rigid(np.eye(3), pose.root_translation) @ local
        else:
            skinning[j] = skinning[parent] @ local

    world = skinning.copy()
    world[:, :3, 3] = np.einsum("jab,jb->ja", skinning[:, :3, :3], rest) + skinning[:, :3, 3]
    return Skeleton(rest_joints=rest, skinning_transforms=skinning, world_transforms=world)


def pose_feature(pose: PoseParams) -> np.ndarray:
    """Flattened (R(theta_j) - I) over non-root joints."""
    rotations = Rotation.from_rotvec(np.array(pose.joint_rotations[1:])).as_matrix()
    return (rotations - np.eye(3)).reshape(-1)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals, unit length."""
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    face_normals = np.cross(v1 - v0, v2 - v0)
    normals = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(normals, faces[:, k], face_normals)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    isolated = lengths[:, 0] == 0.0
    normals[isolated] = (0.0, 0.0, 1.0)
    lengths[isolated] = 1.0
    return normals / lengths


def lbs_skin(model: BodyModel, shaped_vertices: np.ndarray, skeleton: Skeleton, pose: PoseParams) -> PosedMesh:
    vertices = shaped_vertices
    if model.pose_dirs is not None:
        vertices = vertices + model.pose_dirs @ pose_feature(pose)

    blended = np.einsum("vj,jab->vab", model.skin_weights, skeleton.skinning_transforms)
    posed = np.einsum("vab,vb->va", blended[:, :3, :3], vertices) + blended[:, :3, 3]
    posed.setflags(write=False)
    normals = vertex_normals(posed, model.faces)
    normals.setflags(write=False)
    return PosedMesh(vertices=posed, faces=model.faces, normals=normals)


def pose_body(model: BodyModel, shape: ShapeParams, pose: PoseParams) -> tuple[PosedMesh, Skeleton]:
    """Shape, pose and skin in one call."""
    shaped = apply_shape(model, shape)
    skeleton = forward_kinematics(model, shaped, pose)
    return lbs_skin(model, shaped, skeleton, pose), skeleton


# Container checks

def run_model_checks(arrays: dict) -> list[CheckResult]:
    """
    Validate raw container arrays.

    Returns one CheckResult per check. When dimensions disagree the remaining
    checks are not attempted.
    """
    template = np.asarray(arrays["template"])
    faces = np.asarray(arrays["faces"])
    shape_dirs = np.asarray(arrays["shape_dirs"])
    pose_dirs = arrays.get("pose_dirs")
    regressor = arrays["joint_regressor"]
    regressor = regressor.toarray() if sparse.issparse(regressor) else np.asarray(regressor)
    weights = np.asarray(arrays["skin_weights"])
    parents = list(arrays["parents"])
    n_joints = len(parents)

    problems = []
    n_verts = template.shape[0] if template.ndim == 2 else -1
    if template.ndim != 2 or template.shape[1] != 3:
        problems.append(f"template must be (V, 3), got {template.shape}")
    if faces.ndim != 2 or faces.shape[1] != 3:
        problems.append(f"faces must be (F, 3), got {faces.shape}")
    if shape_dirs.ndim != 3 or shape_dirs.shape[:2] != (n_verts, 3):
        problems.append(f"shape_dirs must be ({n_verts}, 3, K), got {shape_dirs.shape}")
    if pose_dirs is not None and np.shape(pose_dirs) != (n_verts, 3, 9 * (n_joints - 1)):
        problems.append(f"pose_dirs must be ({n_verts}, 3, {9 * (n_joints - 1)}), got {np.shape(pose_dirs)}")
    if regressor.shape != (n_joints, n_verts):
        problems.append(f"joint_regressor must be ({n_joints}, {n_verts}), got {regressor.shape}")
    if weights.ndim != 2 or weights.shape[0] != n_verts:
        problems.append(f"skin_weights must have {n_verts} rows, got {weights.shape}")
    elif weights.shape[1] != n_joints:
        problems.append(f"skin_weights has {weights.shape[1]} joint columns but parents lists {n_joints} joints")
    names = arrays.get("joint_names") or ()
    if names and len(names) != n_joints:
        problems.append(f"{len(names)} joint names for {n_joints} joints")
    if problems:
        return [CheckResult("dimensions", False, "; ".join(problems), DimensionMismatchError)]
    results = [CheckResult("dimensions", True, f"V={n_verts} F={faces.shape[0]} J={n_joints} K={shape_dirs.shape[2]}")]

    float_arrays = [template, shape_dirs, regressor, weights] + ([np.asarray(pose_dirs)] if pose_dirs is not None else [])
    if all(np.all(np.isfinite(a)) for a in float_arrays):
        results.append(CheckResult("finite", True))
    else:
        results.append(CheckResult("finite", False, "non-finite values in model arrays", InvalidModelError))

    if faces.size and (faces.min() < 0 or faces.max() >= n_verts):
        results.append(CheckResult("faces", False, f"face indices outside [0, {n_verts})", InvalidModelError))
    elif np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])):
        results.append(CheckResult("faces", False, "face with repeated vertex index", InvalidModelError))
    else:
        results.append(CheckResult("faces", True, f"{faces.shape[0]} triangles"))
        unused = np.flatnonzero(np.bincount(faces.ravel(), minlength=n_verts) == 0)
        if unused.size:
            detail = f"vertex {int(unused[0])} is not used by any face"
            if unused.size > 1:
                detail += f" ({unused.size} vertices unused)"
            results.append(CheckResult("unused_vertices", False, detail, InvalidModelError))
        else:
            results.append(CheckResult("unused_vertices", True))

    sums = weights.sum(axis=1)
    bad_rows = np.flatnonzero(np.abs(sums - 1.0) > WEIGHT_TOLERANCE)
    if np.any(weights < 0):
        row = int(np.flatnonzero(np.any(weights < 0, axis=1))[0])
        results.append(CheckResult("skin_weights", False, f"weights not normalized: negative weight in row {row}",
                                   WeightsNotNormalizedError))
    elif bad_rows.size:
        row = int(bad_rows[0])
        results.append(CheckResult("skin_weights", False,
                                   f"weights not normalized: row {row} sums to {sums[row]:.6g}",
                                   WeightsNotNormalizedError))
    else:
        results.append(CheckResult("skin_weights", True))

    results.append(_check_tree(parents))

    row_sums = regressor.sum(axis=1)
    bad = np.flatnonzero(np.abs(row_sums - 1.0) > REGRESSOR_TOLERANCE)
    if bad.size:
        results.append(CheckResult("joint_regressor", False,
                                   f"regressor row {int(bad[0])} sums to {row_sums[bad[0]]:.6g}", InvalidModelError))
    else:
        results.append(CheckResult("joint_regressor", True))
    return results


def _check_tree(parents: list[int]) -> CheckResult:
    n = len(parents)
    if n == 0:
        return CheckResult("kinematic_tree", False, "model has no joints", InvalidModelError)
    out_of_range = [j for j, p in enumerate(parents) if p >= n or (p < 0 and p != -1) or p == j]
    if out_of_range:
        j = out_of_range[0]
        if parents[j] == j:
            return CheckResult("kinematic_tree", False, f"kinematic cycle: joint {j} is its own parent",
                               KinematicCycleError)
        return CheckResult("kinematic_tree", False, f"joint {j} has invalid parent {parents[j]}", InvalidModelError)
    try:
        joint_order(parents)
    except KinematicCycleError as exc:
        return CheckResult("kinematic_tree", False, str(exc), KinematicCycleError)
    roots = [j for j, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        return CheckResult("kinematic_tree", False, f"expected one root joint, found {len(roots)}", InvalidModelError)
    return CheckResult("kinematic_tree", True, f"root joint {roots[0]}")


# Container I/O

def _container_dir(path) -> Path:
    root = Path(path)
    return root.parent if root.name == MANIFEST_NAME else root


def _read_container(path) -> dict:
    root = _container_dir(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingFileError(f"missing file: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidModelError(f"{manifest_path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if manifest.get("format") != CONTAINER_FORMAT:
        raise InvalidModelError(f"{manifest_path}: not a {CONTAINER_FORMAT} container")

    entries = manifest.get("arrays", {})
    arrays = {}
    for name in _ARRAY_FILES:
        entry = entries.get(name)
        if entry is None:
            if name in _REQUIRED_ARRAYS:
                raise MissingFileError(f"manifest lists no '{name}' array")
            continue
        file_path = root / entry["file"]
        if not file_path.is_file():
            raise MissingFileError(f"missing file: {file_path}")
        data = np.fromfile(file_path, dtype=_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        if data.size != math.prod(shape):
            raise DimensionMismatchError(f"{file_path.name}: {data.size} values, manifest shape {list(shape)}")
        arrays[name] = data.reshape(shape)

    arrays["faces"] = arrays["faces"].astype(np.int64)
    for name in ("template", "shape_dirs", "pose_dirs", "joint_regressor", "skin_weights"):
        if name in arrays:
            arrays[name] = arrays[name].astype(np.float64)
    arrays["parents"] = [int(p) for p in manifest.get("parents", [])]
    arrays["joint_names"] = list(manifest.get("joint_names", []))
    arrays["gender_tag"] = manifest.get("gender_tag", "neutral")
    return arrays


def _from_arrays(arrays: dict) -> BodyModel:
    pose_dirs = arrays.get("pose_dirs")
    regressor = sparse.csr_matrix(np.asarray(arrays["joint_regressor"], dtype=np.float64))
    return BodyModel(
        template_vertices=_readonly(arrays["template"], np.float64),
        faces=_readonly(arrays["faces"], np.int64),
        shape_dirs=_readonly(arrays["shape_dirs"], np.float64),
        pose_dirs=None if pose_dirs is None else _readonly(pose_dirs, np.float64),
        joint_regressor=regressor,
        skin_weights=_readonly(arrays["skin_weights"], np.float64),
        parents=tuple(int(p) for p in arrays["parents"]),
        gender_tag=arrays.get("gender_tag", "neutral"),
        joint_names=tuple(arrays.get("joint_names") or ()),
    )


def inspect_body_model(path) -> list[CheckResult]:
    """Run every check against a container without raising."""
    try:
        arrays = _read_container(path)
    except (MissingFileError, DimensionMismatchError, InvalidModelError) as exc:
        return [CheckResult("container", False, str(exc), type(exc))]
    return [CheckResult("container", True, str(_container_dir(path)))] + run_model_checks(arrays)


def load_body_model(path) -> BodyModel:
    """Load and validate a model container directory."""
    arrays = _read_container(path)
    failures = [check for check in run_model_checks(arrays) if not check.passed]
    if failures:
        raise failures[0].error_cls(failures[0].detail)
    model = _from_arrays(arrays)
    logger.info("loaded body model", extra={"path": str(_container_dir(path)), "vertices": model.num_vertices,
                                            "joints": model.num_joints, "gender": model.gender_tag})
    return model


def save_body_model(model: BodyModel, path) -> Path:
    """Write a model container; returns the directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    arrays = {
        "template": model.template_vertices,
        "faces": model.faces,
        "shape_dirs": model.shape_dirs,
        "joint_regressor": model.joint_regressor.toarray(),
        "skin_weights": model.skin_weights,
    }
    if model.pose_dirs is not None:
        arrays["pose_dirs"] = model.pose_dirs

    manifest_arrays = {}
    for name, values in arrays.items():
        file_name, dtype = _ARRAY_FILES[name]
        np.ascontiguousarray(values, dtype=_DTYPES[dtype]).tofile(root / file_name)
        manifest_arrays[name] = {"file": file_name, "dtype": dtype, "shape": list(values.shape)}

    manifest = {
        "format": CONTAINER_FORMAT,
        "version": CONTAINER_VERSION,
        "gender_tag": model.gender_tag,
        "num_vertices": model.num_vertices,
        "num_faces": int(model.faces.shape[0]),
        "num_joints": model.num_joints,
        "num_shapes": model.num_shapes,
        "parents": list(model.parents),
        "joint_names": list(model.joint_names),
        "arrays": manifest_arrays,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return root


def make_toy_biped(n_segments: int = 8, radius: float = 0.1, gender_tag: str = "neutral") -> BodyModel:
    """Procedural biped with 2-bone arms and legs; deterministic for fixed inputs."""
    if n_segments < 2:
        raise ParameterError(f"n_segments must be >= 2, got {n_segments}")
    raw = build_toy_biped(n_segments, radius)
    arrays = {
        "template": raw["template"],
        "faces": raw["faces"],
        "shape_dirs": raw["shape_dirs"],
        "joint_regressor": raw["joint_regressor"],
        "skin_weights": raw["skin_weights"],
        "parents": list(raw["parents"]),
        "joint_names": list(raw["joint_names"]),
        "gender_tag": gender_tag,
    }
    return _from_arrays(arrays)
