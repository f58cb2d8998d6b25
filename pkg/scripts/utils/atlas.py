"""
The 24-chart IUV surface atlas.

Faces carry a chart index I in 1..24 and per-corner (u, v). Charts group into
14 semantic parts through a table that ships as data (data/chart_parts.json).
Textures use a chart-packed layout: 4 columns by 6 rows of square tiles,
chart I in column (I - 1) // 6, row (I - 1) % 6, v growing upward.
"""

import functools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from errors import AtlasCoverageError, AtlasError, DimensionError, MissingFileError, UnknownChartError
from toy_biped import build_toy_biped

logger = logging.getLogger(__name__)

NUM_CHARTS = 24
NUM_PARTS = 14
TILE_COLUMNS, TILE_ROWS = 4, 6
DEFAULT_CHART_PARTS = Path(__file__).resolve().parents[2] / "data" / "chart_parts.json"
ATLAS_FORMAT = "corrgen-uv-atlas"
ATLAS_MANIFEST = "atlas.json"

IuvMode = Literal["barycentric", "nearest_vertex"]


@dataclass(frozen=True)
class IuvSample:
    chart: int
    u: float
    v: float


@functools.lru_cache(maxsize=4)
def load_chart_parts(path: Optional[str] = None) -> tuple[dict[int, int], dict[int, str]]:
    """Read the chart -> part grouping table; returns (chart_to_part, part_names)."""
    table_path = Path(path) if path else DEFAULT_CHART_PARTS
    if not table_path.is_file():
        raise MissingFileError(f"missing file: {table_path}")
    doc = json.loads(table_path.read_text())
    chart_to_part = {int(k): int(v) for k, v in doc["chart_to_part"].items()}
    part_names = {int(k): v for k, v in doc["parts"].items()}
    return chart_to_part, part_names


def part_of_chart(chart: int, chart_to_part: Optional[dict[int, int]] = None) -> int:
    """Semantic part id (1..14) of a chart (1..24)."""
    table = chart_to_part if chart_to_part is not None else load_chart_parts()[0]
    if chart not in table:
        raise UnknownChartError(f"chart {chart} is outside 1..{NUM_CHARTS}")
    return table[chart]


def chart_part_lut(chart_to_part: dict[int, int]) -> np.ndarray:
    """Lookup array indexed by chart; index 0 (background) maps to part 0."""
    lut = np.zeros(NUM_CHARTS + 1, dtype=np.uint8)
    for chart, part in chart_to_part.items():
        lut[chart] = part
    return lut


@dataclass(frozen=True, eq=False)
class UvAtlas:
    faces: np.ndarray            # (F, 3) vertex indices, same topology as the body model
    face_chart: np.ndarray       # (F,)
    corner_uv: np.ndarray        # (F, 3, 2)
    chart_to_part: dict[int, int]
    part_names: dict[int, str] = field(default_factory=dict)
    vertex_iuv: np.ndarray = field(init=False, repr=False)
    _lookup: dict = field(init=False, repr=False)

    def __post_init__(self):
        validate_atlas(self.faces, self.face_chart, self.corner_uv, self.chart_to_part)
        n_verts = int(self.faces.max()) + 1

        # Canonical IUV per vertex comes from its lowest-index incident face
        vertex_iuv = np.full((n_verts, 3), np.nan)
        flat_vertices = self.faces.reshape(-1)
        flat_faces = np.repeat(np.arange(self.faces.shape[0]), 3)
        flat_uv = self.corner_uv.reshape(-1, 2)
        order = np.lexsort((flat_faces, flat_vertices))
        first = order[np.r_[True, flat_vertices[order][1:] != flat_vertices[order][:-1]]]
        vertex_iuv[flat_vertices[first], 0] = self.face_chart[flat_faces[first]]
        vertex_iuv[flat_vertices[first], 1:] = flat_uv[first]
        vertex_iuv.setflags(write=False)
        object.__setattr__(self, "vertex_iuv", vertex_iuv)

        lookup = {}
        flat_chart = self.face_chart[flat_faces]
        for chart in np.unique(self.face_chart):
            rows = np.unique(np.column_stack([flat_vertices, flat_uv])[flat_chart == chart], axis=0)
            lookup[int(chart)] = (cKDTree(rows[:, 1:]), rows[:, 0].astype(np.int64))
        object.__setattr__(self, "_lookup", lookup)

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def charts(self) -> list[int]:
        return sorted(self._lookup)

    def face_part(self) -> np.ndarray:
        return chart_part_lut(self.chart_to_part)[self.face_chart]


def validate_atlas(faces, face_chart, corner_uv, chart_to_part) -> None:
    if face_chart.shape != (faces.shape[0],) or corner_uv.shape != (faces.shape[0], 3, 2):
        raise DimensionError(f"atlas arrays disagree: {faces.shape[0]} faces, charts {face_chart.shape}, "
                             f"uv {corner_uv.shape}")
    bad = (face_chart < 1) | (face_chart > NUM_CHARTS)
    if np.any(bad):
        raise UnknownChartError(f"face {int(np.flatnonzero(bad)[0])} has chart {int(face_chart[bad][0])}")
    if np.any(~np.isfinite(corner_uv)) or corner_uv.min() < 0.0 or corner_uv.max() > 1.0:
        raise AtlasError("corner UVs must lie in [0, 1]")
    missing = sorted(set(np.unique(face_chart).tolist()) - set(chart_to_part))
    if missing:
        raise AtlasCoverageError(f"chart_to_part has no entry for charts {missing}")


def uncovered_faces(atlas: UvAtlas, model_faces: np.ndarray) -> np.ndarray:
    """Model face indices the atlas has no matching triangle for."""
    model_faces = np.asarray(model_faces)
    n = min(atlas.num_faces, model_faces.shape[0])
    differs = np.flatnonzero(np.any(atlas.faces[:n] != model_faces[:n], axis=1))
    return np.concatenate([differs, np.arange(n, model_faces.shape[0])]).astype(np.int64)


def surfaces_to_iuv(atlas: UvAtlas, faces: np.ndarray, barycentric: np.ndarray,
                    mode: IuvMode = "barycentric") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched surface_to_iuv over (face, barycentric) pairs; returns (I, U, V)."""
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size and (faces.min() < 0 or faces.max() >= atlas.num_faces):
        raise AtlasError(f"face index outside atlas (0..{atlas.num_faces - 1})")
    charts = atlas.face_chart[faces]
    uv = atlas.corner_uv[faces]
    if mode == "barycentric":
        blended = np.einsum("nk,nkd->nd", barycentric, uv)
        blended = np.clip(blended, 0.0, 1.0)
        return charts, blended[:, 0], blended[:, 1]
    if mode != "nearest_vertex":
        raise ValueError(f"unknown IUV mode {mode!r}")

    # Largest barycentric weight wins; equal weights go to the lowest vertex index
    corner_vertices = atlas.faces[faces]
    best = np.max(barycentric, axis=1, keepdims=True)
    candidates = np.where(barycentric == best, corner_vertices, np.iinfo(np.int64).max)
    corner = np.argmin(candidates, axis=1)
    picked = uv[np.arange(len(faces)), corner]
    return charts, picked[:, 0], picked[:, 1]


def surface_to_iuv(hit, atlas: UvAtlas, mode: IuvMode = "barycentric") -> IuvSample:
    charts, u, v = surfaces_to_iuv(atlas, np.array([hit.face]), np.asarray([hit.barycentric], dtype=np.float64), mode)
    return IuvSample(int(charts[0]), float(u[0]), float(v[0]))


def iuv_to_vertices(atlas: UvAtlas, charts: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Nearest stored vertex inside each sample's chart; ties go to the lowest vertex index."""
    charts = np.asarray(charts, dtype=np.int64)
    queries = np.column_stack([u, v]).astype(np.float64)
    result = np.empty(len(charts), dtype=np.int64)
    for chart in np.unique(charts):
        if int(chart) not in atlas._lookup:
            raise UnknownChartError(f"chart {int(chart)} has no surface in this atlas")
        tree, vertex_ids = atlas._lookup[int(chart)]
        rows = np.flatnonzero(charts == chart)
        k = min(8, len(vertex_ids))
        dist, idx = tree.query(queries[rows], k=k)
        dist, idx = dist.reshape(len(rows), k), idx.reshape(len(rows), k)
        tied = dist <= dist[:, :1] + 1e-12
        result[rows] = np.where(tied, vertex_ids[idx], np.iinfo(np.int64).max).min(axis=1)
    return result


def iuv_to_vertex(atlas: UvAtlas, sample: IuvSample) -> int:
    return int(iuv_to_vertices(atlas, np.array([sample.chart]), np.array([sample.u]), np.array([sample.v]))[0])


def max_face_uv_extent(atlas: UvAtlas) -> float:
    """Largest per-face UV bounding-box diagonal."""
    extent = atlas.corner_uv.max(axis=1) - atlas.corner_uv.min(axis=1)
    return float(np.linalg.norm(extent, axis=1).max())


# Texture layout

def texture_coords(charts: np.ndarray, u: np.ndarray, v: np.ndarray, tile_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous texel coordinates (x, y) in the chart-packed texture."""
    col = (np.asarray(charts) - 1) // TILE_ROWS
    row = (np.asarray(charts) - 1) % TILE_ROWS
    return (col + u) * tile_size, (row + 1.0 - v) * tile_size


def sample_texture(texture: np.ndarray, charts: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear texture lookup kept inside each chart's tile. Returns (N, C) floats."""
    height, width = texture.shape[:2]
    tile = width // TILE_COLUMNS
    if width != TILE_COLUMNS * tile or height != TILE_ROWS * tile:
        raise DimensionError(f"texture {width}x{height} is not a {TILE_COLUMNS}x{TILE_ROWS} tile layout")
    x, y = texture_coords(charts, u, v, tile)
    col = (np.asarray(charts) - 1) // TILE_ROWS
    row = (np.asarray(charts) - 1) % TILE_ROWS
    # texel centers sit at integer + 0.5
    x = np.clip(x - 0.5, col * tile, (col + 1) * tile - 1)
    y = np.clip(y - 0.5, row * tile, (row + 1) * tile - 1)
    tex = texture.astype(np.float64)
    if tex.ndim == 2:
        tex = tex[..., None]
    return np.stack([ndimage.map_coordinates(tex[..., c], [y, x], order=1, mode="nearest")
                     for c in range(tex.shape[2])], axis=1)


def part_layout(tile_size: int, chart_to_part: dict[int, int]) -> np.ndarray:
    """Part id per texel of the chart-packed texture."""
    layout = np.zeros((TILE_ROWS * tile_size, TILE_COLUMNS * tile_size), dtype=np.uint8)
    for chart, part in chart_to_part.items():
        col, row = (chart - 1) // TILE_ROWS, (chart - 1) % TILE_ROWS
        layout[row * tile_size:(row + 1) * tile_size, col * tile_size:(col + 1) * tile_size] = part
    return layout


def mix_textures(texture_a: np.ndarray, texture_b: np.ndarray, layout: np.ndarray, rng: np.random.Generator,
                 feather_px: float = 2.0) -> tuple[np.ndarray, dict[int, bool]]:
    """
    Stitch two textures part by part.

    Each part takes its texels from a or b by a fair coin. Texels within
    feather_px of a boundary between differently-sourced parts are blended.
    Returns (texture, coins) where coins[part] is True when a was chosen.
    """
    if texture_a.shape != texture_b.shape:
        raise DimensionError(f"texture shapes differ: {texture_a.shape} vs {texture_b.shape}")
    if layout.shape != texture_a.shape[:2]:
        raise DimensionError(f"part layout {layout.shape} does not match texture {texture_a.shape[:2]}")

    coins = {int(part): bool(rng.random() < 0.5) for part in np.unique(layout) if part > 0}
    take_a = np.zeros(NUM_PARTS + 1, dtype=bool)
    for part, choice in coins.items():
        take_a[part] = choice
    from_a = take_a[layout]

    a = texture_a.astype(np.float64)
    b = texture_b.astype(np.float64)
    mask = from_a[..., None] if a.ndim == 3 else from_a
    out = np.where(mask, a, b)

    if from_a.any() and (~from_a).any() and feather_px > 0:
        inside = ndimage.distance_transform_edt(from_a) - 0.5
        outside = ndimage.distance_transform_edt(~from_a) - 0.5
        signed = np.where(from_a, inside, -outside)
        band = np.abs(signed) < feather_px
        weight = np.clip(0.5 + signed / (2.0 * feather_px), 0.0, 1.0)
        if a.ndim == 3:
            weight = weight[..., None]
            band3 = np.broadcast_to(band[..., None], a.shape)
        else:
            band3 = band
        out = np.where(band3, b + weight * (a - b), out)

    if np.issubdtype(texture_a.dtype, np.integer):
        out = np.clip(np.rint(out), 0, np.iinfo(texture_a.dtype).max).astype(texture_a.dtype)
    return out, coins


# Container I/O

def save_atlas(atlas: UvAtlas, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(atlas.faces, dtype="<i4").tofile(root / "faces.i32")
    np.ascontiguousarray(atlas.face_chart, dtype="<i4").tofile(root / "face_chart.i32")
    np.ascontiguousarray(atlas.corner_uv, dtype="<f4").tofile(root / "corner_uv.f32")
    manifest = {
        "format": ATLAS_FORMAT,
        "version": 1,
        "num_faces": atlas.num_faces,
        "arrays": {
            "faces": {"file": "faces.i32", "dtype": "i32", "shape": [atlas.num_faces, 3]},
            "face_chart": {"file": "face_chart.i32", "dtype": "i32", "shape": [atlas.num_faces]},
            "corner_uv": {"file": "corner_uv.f32", "dtype": "f32", "shape": [atlas.num_faces, 3, 2]},
        },
        "chart_to_part": {str(k): v for k, v in sorted(atlas.chart_to_part.items())},
        "parts": {str(k): v for k, v in sorted(atlas.part_names.items())},
    }
    (root / ATLAS_MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return root


def load_atlas(path, expected_faces: Optional[np.ndarray] = None) -> UvAtlas:
    """Load an atlas directory; optionally check it covers a model's faces."""
    root = Path(path)
    root = root.parent if root.name == ATLAS_MANIFEST else root
    manifest_path = root / ATLAS_MANIFEST
    if not manifest_path.is_file():
        raise MissingFileError(f"missing file: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != ATLAS_FORMAT:
        raise AtlasError(f"{manifest_path}: not a {ATLAS_FORMAT} file")

    arrays = {}
    for name, entry in manifest["arrays"].items():
        file_path = root / entry["file"]
        if not file_path.is_file():
            raise MissingFileError(f"missing file: {file_path}")
        data = np.fromfile(file_path, dtype="<i4" if entry["dtype"] == "i32" else "<f4")
        if data.size != int(np.prod(entry["shape"])):
            raise DimensionError(f"{file_path.name}: {data.size} values, manifest shape {entry['shape']}")
        arrays[name] = data.reshape(entry["shape"])

    if "chart_to_part" in manifest:
        chart_to_part = {int(k): int(v) for k, v in manifest["chart_to_part"].items()}
        part_names = {int(k): v for k, v in manifest.get("parts", {}).items()}
    else:
        chart_to_part, part_names = load_chart_parts()

    faces = arrays["faces"].astype(np.int64)
    if expected_faces is not None and not np.array_equal(faces, np.asarray(expected_faces)):
        raise AtlasCoverageError("atlas faces do not match the body model topology")
    atlas = UvAtlas(
        faces=faces,
        face_chart=arrays["face_chart"].astype(np.int64),
        corner_uv=arrays["corner_uv"].astype(np.float64),
        chart_to_part=chart_to_part,
        part_names=part_names,
    )
    logger.info("loaded atlas", extra={"path": str(root), "faces": atlas.num_faces, "charts": len(atlas.charts)})
    return atlas


def make_toy_atlas(n_segments: int = 8, radius: float = 0.1) -> UvAtlas:
    """Atlas matching make_toy_biped(n_segments, radius)."""
    raw = build_toy_biped(n_segments, radius)
    chart_to_part, part_names = load_chart_parts()
    return UvAtlas(
        faces=raw["faces"],
        face_chart=raw["face_chart"],
        corner_uv=raw["corner_uv"],
        chart_to_part=dict(chart_to_part),
        part_names=dict(part_names),
    )
