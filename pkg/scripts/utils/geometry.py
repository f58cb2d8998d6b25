"""
Ray casting, visibility and geodesics on triangle meshes.

The BVH is a flat array tree. Traversal is a numpy wavefront over
(ray, node) pairs, so a whole image block is intersected in one call.
"""

import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from camera import in_image, pixel_ray, pixel_rays, project_points
from errors import EmptyMeshError, ParameterError
from models import CameraModel

logger = logging.getLogger(__name__)

LEAF_SIZE = 4
TIE_EPSILON = 1e-12
BARY_SLACK = 1e-9
MIN_HIT_T = 1e-9
VISIBILITY_OFFSET = 1e-5
_DET_EPSILON = 1e-14
_TINY_DIRECTION = 1e-12


@dataclass(frozen=True, eq=False)
class Bvh:
    node_min: np.ndarray       # (N, 3)
    node_max: np.ndarray       # (N, 3)
    left: np.ndarray           # (N,), -1 on leaves
    right: np.ndarray          # (N,)
    start: np.ndarray          # (N,), first slot in tri_index
    count: np.ndarray          # (N,)
    tri_index: np.ndarray      # (F,) triangle permutation

    @property
    def num_nodes(self) -> int:
        return self.left.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0


@dataclass(frozen=True)
class SurfaceHit:
    face: int
    t: float
    barycentric: tuple[float, float, float]

    def point(self, mesh) -> np.ndarray:
        corners = mesh.vertices[mesh.faces[self.face]]
        return np.asarray(self.barycentric) @ corners


@dataclass(frozen=True, eq=False)
class RayHits:
    """Batched nearest hits; face -1 and t inf mark misses."""
    face: np.ndarray
    t: np.ndarray
    barycentric: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.face >= 0

    def at(self, index: int) -> Optional[SurfaceHit]:
        if self.face[index] < 0:
            return None
        return SurfaceHit(int(self.face[index]), float(self.t[index]), tuple(float(b) for b in self.barycentric[index]))

    def points(self, mesh) -> np.ndarray:
        corners = mesh.vertices[mesh.faces[np.maximum(self.face, 0)]]
        pts = np.einsum("rk,rkd->rd", self.barycentric, corners)
        pts[~self.hit] = np.nan
        return pts


# BVH construction

def build_bvh(mesh) -> Bvh:
    """Median-split BVH over triangle centroids."""
    faces = np.asarray(mesh.faces)
    if faces.shape[0] == 0:
        raise EmptyMeshError("cannot build a BVH over a mesh without triangles")
    corners = np.asarray(mesh.vertices)[faces]
    tri_min, tri_max = corners.min(axis=1), corners.max(axis=1)
    centroids = corners.mean(axis=1)

    perm = np.arange(faces.shape[0])
    node_min, node_max, left, right, start, count = [], [], [], [], [], []

    def new_node(lo: int, hi: int) -> int:
        idx = perm[lo:hi]
        node_min.append(tri_min[idx].min(axis=0))
        node_max.append(tri_max[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(lo)
        count.append(hi - lo)
        return len(left) - 1

    stack = [new_node(0, faces.shape[0])]
    while stack:
        node = stack.pop()
        lo, n = start[node], count[node]
        if n <= LEAF_SIZE:
            continue
        idx = perm[lo:lo + n]
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        perm[lo:lo + n] = idx[np.argsort(c[:, axis], kind="stable")]
        mid = lo + n // 2
        left[node] = new_node(lo, mid)
        right[node] = new_node(mid, lo + n)
        stack.extend([right[node], left[node]])

    return Bvh(
        node_min=np.asarray(node_min), node_max=np.asarray(node_max),
        left=np.asarray(left, dtype=np.int64), right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64), count=np.asarray(count, dtype=np.int64),
        tri_index=perm,
    )


def bvh_depth(bvh: Bvh) -> int:
    depth, stack = 0, [(0, 1)]
    while stack:
        node, level = stack.pop()
        depth = max(depth, level)
        if bvh.left[node] >= 0:
            stack.extend([(bvh.left[node], level + 1), (bvh.right[node], level + 1)])
    return depth


def debug_bvh_stats(bvh: Bvh) -> dict:
    """Summary numbers for a built tree (JSON-serializable)."""
    leaves = bvh.left < 0
    leaf_sizes = bvh.count[leaves]
    return {
        "nodes": int(bvh.num_nodes),
        "leaves": int(leaves.sum()),
        "triangles": int(bvh.tri_index.shape[0]),
        "depth": bvh_depth(bvh),
        "max_leaf_size": int(leaf_sizes.max()),
        "mean_leaf_size": float(leaf_sizes.mean()),
    }


def dump_bvh_stats(bvh: Bvh, path) -> None:
    with open(path, "w") as f:
        json.dump(debug_bvh_stats(bvh), f, indent=2)


# Intersection

def moller_trumbore(origins, dirs, v0, v1, v2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Row-wise ray/triangle test.

    Returns (hit, t, barycentric (b0, b1, b2)). Barycentric coordinates are
    accepted down to -BARY_SLACK so rays through shared edges hit both faces.
    """
    e1, e2 = v1 - v0, v2 - v0
    p = np.cross(dirs, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > _DET_EPSILON
    inv_det = 1.0 / np.where(ok, det, 1.0)
    s = origins - v0
    u = np.einsum("ij,ij->i", s, p) * inv_det
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", dirs, q) * inv_det
    t = np.einsum("ij,ij->i", e2, q) * inv_det
    hit = ok & (u >= -BARY_SLACK) & (v >= -BARY_SLACK) & (u + v <= 1.0 + BARY_SLACK) & (t > MIN_HIT_T)
    return hit, t, np.stack([1.0 - u - v, u, v], axis=1)


def _nearest_per_ray(rays, t, faces, bary, n_rays) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduce candidate hits: smallest t, lowest face index within TIE_EPSILON."""
    best_t = np.full(n_rays, np.inf)
    best_face = np.full(n_rays, -1, dtype=np.int64)
    best_bary = np.zeros((n_rays, 3))
    if rays.size == 0:
        return best_t, best_face, best_bary
    np.minimum.at(best_t, rays, t)
    near = t <= best_t[rays] + TIE_EPSILON
    lowest = np.full(n_rays, np.iinfo(np.int64).max)
    np.minimum.at(lowest, rays[near], faces[near])
    chosen = np.flatnonzero(near & (faces == lowest[rays]))
    best_face[rays[chosen]] = faces[chosen]
    best_t[rays[chosen]] = t[chosen]
    best_bary[rays[chosen]] = bary[chosen]
    return best_t, best_face, best_bary


def _merge(old: RayHits, t, face, bary) -> None:
    closer = t < old.t - TIE_EPSILON
    both = np.isfinite(t) & np.isfinite(old.t)
    gap = np.full_like(old.t, np.inf)
    gap[both] = np.abs(t[both] - old.t[both])
    tie = (gap <= TIE_EPSILON) & (face >= 0) & ((old.face < 0) | (face < old.face))
    take = (face >= 0) & (closer | tie)
    old.t[take] = t[take]
    old.face[take] = face[take]
    old.barycentric[take] = bary[take]


def ray_cast_batch(bvh: Bvh, mesh, origins: np.ndarray, dirs: np.ndarray,
                   t_max: Optional[np.ndarray] = None) -> RayHits:
    """Nearest hit per ray (R, 3). With t_max, hits at or beyond it are ignored."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = origins.shape[0]
    vertices, faces = np.asarray(mesh.vertices), np.asarray(mesh.faces)
    limit = np.full(n_rays, np.inf) if t_max is None else np.asarray(t_max, dtype=np.float64)

    safe = np.where(np.abs(dirs) < _TINY_DIRECTION, np.copysign(_TINY_DIRECTION, dirs), dirs)
    inv_dirs = 1.0 / safe
    result = RayHits(face=np.full(n_rays, -1, dtype=np.int64), t=np.full(n_rays, np.inf),
                     barycentric=np.zeros((n_rays, 3)))

    ray_ids = np.arange(n_rays)
    node_ids = np.zeros(n_rays, dtype=np.int64)
    while ray_ids.size:
        o, inv = origins[ray_ids], inv_dirs[ray_ids]
        t1 = (bvh.node_min[node_ids] - o) * inv
        t2 = (bvh.node_max[node_ids] - o) * inv
        t_near = np.minimum(t1, t2).max(axis=1)
        t_far = np.maximum(t1, t2).min(axis=1)
        bound = np.minimum(limit[ray_ids], result.t[ray_ids] + TIE_EPSILON)
        keep = (t_near <= t_far + 1e-9) & (t_far >= 0.0) & (t_near <= bound)
        ray_ids, node_ids = ray_ids[keep], node_ids[keep]

        leaf = bvh.left[node_ids] < 0
        leaf_rays, leaf_nodes = ray_ids[leaf], node_ids[leaf]
        if leaf_rays.size:
            counts = bvh.count[leaf_nodes]
            cand_rays = np.repeat(leaf_rays, counts)
            offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            cand_faces = bvh.tri_index[np.repeat(bvh.start[leaf_nodes], counts) + offsets]
            tri = faces[cand_faces]
            hit, t, bary = moller_trumbore(origins[cand_rays], dirs[cand_rays],
                                           vertices[tri[:, 0]], vertices[tri[:, 1]], vertices[tri[:, 2]])
            hit &= t < limit[cand_rays]
            best_t, best_face, best_bary = _nearest_per_ray(
                cand_rays[hit], t[hit], cand_faces[hit], bary[hit], n_rays)
            _merge(result, best_t, best_face, best_bary)

        inner_rays, inner_nodes = ray_ids[~leaf], node_ids[~leaf]
        ray_ids = np.concatenate([inner_rays, inner_rays])
        node_ids = np.concatenate([bvh.left[inner_nodes], bvh.right[inner_nodes]])
    return result


def intersect_brute_force(mesh, origins: np.ndarray, dirs: np.ndarray) -> RayHits:
    """Test every ray against every triangle; reference for the BVH path."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    vertices, faces = np.asarray(mesh.vertices), np.asarray(mesh.faces)
    n_rays, n_faces = origins.shape[0], faces.shape[0]
    rays = np.repeat(np.arange(n_rays), n_faces)
    face_ids = np.tile(np.arange(n_faces), n_rays)
    tri = faces[face_ids]
    hit, t, bary = moller_trumbore(origins[rays], dirs[rays],
                                   vertices[tri[:, 0]], vertices[tri[:, 1]], vertices[tri[:, 2]])
    best_t, best_face, best_bary = _nearest_per_ray(rays[hit], t[hit], face_ids[hit], bary[hit], n_rays)
    return RayHits(face=best_face, t=best_t, barycentric=best_bary)


def ray_cast(bvh: Bvh, mesh, origin, direction) -> Optional[SurfaceHit]:
    hits = ray_cast_batch(bvh, mesh, np.asarray(origin, dtype=np.float64).reshape(1, 3),
                          np.asarray(direction, dtype=np.float64).reshape(1, 3))
    return hits.at(0)


# Visibility and pixel queries

def vertex_visibility(mesh, bvh: Bvh, camera: CameraModel, offset: float = VISIBILITY_OFFSET) -> np.ndarray:
    """
    Per-vertex visibility from the camera.

    A vertex is visible when it projects onto the image in front of the near
    plane and the segment from the (normal-offset) vertex to the camera
    center crosses no surface.
    """
    vertices = np.asarray(mesh.vertices)
    pixels, _, in_front = project_points(camera, vertices)
    candidate = in_front & in_image(camera, pixels)
    visible = np.zeros(vertices.shape[0], dtype=bool)
    idx = np.flatnonzero(candidate)
    if idx.size == 0:
        return visible

    origins = vertices[idx] + offset * np.asarray(mesh.normals)[idx]
    to_camera = camera.center - origins
    distance = np.linalg.norm(to_camera, axis=1)
    hits = ray_cast_batch(bvh, mesh, origins, to_camera / distance[:, None], t_max=distance)
    visible[idx] = ~hits.hit
    return visible


def pixel_to_surface(camera: CameraModel, bvh: Bvh, mesh, pixel) -> Optional[SurfaceHit]:
    """Surface point seen through a pixel, or None for background."""
    origin, direction = pixel_ray(camera, pixel)
    return ray_cast(bvh, mesh, origin, direction)


def pixels_to_surface(camera: CameraModel, bvh: Bvh, mesh, pixels: np.ndarray) -> tuple[RayHits, np.ndarray]:
    """Batched pixel_to_surface. Pixels whose undistortion failed come back as misses with valid=False."""
    origins, dirs, valid = pixel_rays(camera, pixels)
    hits = ray_cast_batch(bvh, mesh, origins[valid], dirs[valid])
    full = RayHits(face=np.full(len(valid), -1, dtype=np.int64), t=np.full(len(valid), np.inf),
                   barycentric=np.zeros((len(valid), 3)))
    full.face[valid], full.t[valid], full.barycentric[valid] = hits.face, hits.t, hits.barycentric
    return full, valid


# Geodesics

def edge_graph(vertices: np.ndarray, faces: np.ndarray) -> sparse.csr_matrix:
    """Symmetric sparse adjacency weighted by Euclidean edge length."""
    faces = np.asarray(faces)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    lengths = np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)
    n = vertices.shape[0]
    graph = sparse.coo_matrix((lengths, (edges[:, 0], edges[:, 1])), shape=(n, n))
    return (graph + graph.T).tocsr()


def geodesic_distances(mesh, source_vertex, graph: Optional[sparse.csr_matrix] = None) -> np.ndarray:
    """
    Edge-graph shortest-path distances from one vertex (or a list of vertices).

    A list of sources returns one row per source. Unreachable vertices get inf.
    """
    vertices = np.asarray(mesh.vertices)
    sources = np.atleast_1d(np.asarray(source_vertex))
    if sources.size == 0 or sources.min() < 0 or sources.max() >= vertices.shape[0]:
        raise ParameterError(f"source vertex out of range [0, {vertices.shape[0]})")
    if graph is None:
        graph = edge_graph(vertices, mesh.faces)
    dist = dijkstra(graph, directed=False, indices=sources)
    return dist if np.ndim(source_vertex) else dist[0]
