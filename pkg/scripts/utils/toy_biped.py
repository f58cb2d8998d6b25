"""
Procedural toy biped used for tests and the toy resource set.

The body is box-modelled: a quad-grid torso box with the head, arms and legs
extruded out of rectangular regions of its sides. Extrusion preserves sphere
topology, so the mesh is watertight with Euler characteristic 2. Every face
gets a chart id (24-chart layout) and per-corner UVs laid out so that no two
vertices share a UV inside one chart.
"""

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

JOINT_NAMES = (
    "pelvis", "chest", "neck",
    "left_shoulder", "left_elbow", "right_shoulder", "right_elbow",
    "left_hip", "left_knee", "right_hip", "right_knee",
)
PARENTS = (-1, 0, 1, 1, 3, 1, 5, 0, 7, 0, 9)
NUM_SHAPES = 8

# Torso box: x in [-W/2, W/2], y in [Y0, Y0 + H], z in [-D/2, D/2]; body faces +z, left is +x.
_COUNTS = (10, 12, 4)
_W, _H, _D, _Y0 = 0.4, 0.6, 0.2, 0.9
_Y1 = _Y0 + _H

TORSO_BACK, TORSO_FRONT = 1, 2


@dataclass(frozen=True)
class _Side:
    fixed_axis: int
    fixed_at_max: bool
    axis_a: int
    axis_b: int

    @property
    def normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.fixed_axis] = 1.0 if self.fixed_at_max else -1.0
        return n


# (axis_a x axis_b) points outward on every side
_SIDES = {
    "+z": _Side(2, True, 0, 1),
    "-z": _Side(2, False, 1, 0),
    "+x": _Side(0, True, 1, 2),
    "-x": _Side(0, False, 2, 1),
    "+y": _Side(1, True, 2, 0),
    "-y": _Side(1, False, 0, 2),
}


@dataclass(frozen=True)
class _Appendage:
    name: str
    side: str
    a_range: tuple[int, int]
    b_range: tuple[int, int]
    split_axis: str                 # in-plane axis ("a"/"b") whose sign picks the chart half
    length: float
    radius_scale: float
    taper: float
    upper_charts: tuple[int, int]   # (negative half, positive half)
    lower_charts: Optional[tuple[int, int]]
    cap_chart: Optional[int]        # None: cap split like the sides
    parent_joint: int
    upper_joint: int
    lower_joint: Optional[int]


_APPENDAGES = (
    _Appendage("right_leg", "-y", (1, 4), (0, 4), "b", 0.8, 0.7, 0.3, (7, 9), (11, 13), 6, 0, 9, 10),
    _Appendage("left_leg", "-y", (6, 9), (0, 4), "b", 0.8, 0.7, 0.3, (8, 10), (12, 14), 5, 0, 7, 8),
    _Appendage("left_arm", "+x", (8, 11), (0, 4), "b", 0.6, 0.45, 0.3, (15, 17), (19, 21), 4, 1, 3, 4),
    _Appendage("right_arm", "-x", (0, 4), (8, 11), "a", 0.6, 0.45, 0.3, (16, 18), (20, 22), 3, 1, 5, 6),
    _Appendage("head", "+y", (0, 4), (3, 7), "b", 0.3, 1.0, 0.0, (23, 24), None, None, 1, 2, None),
)


def _lattice_point(side: _Side, p: float, q: float) -> tuple:
    coords = [0.0, 0.0, 0.0]
    coords[side.fixed_axis] = _COUNTS[side.fixed_axis] if side.fixed_at_max else 0
    coords[side.axis_a] = p
    coords[side.axis_b] = q
    return tuple(coords)


def _lattice_position(ijk) -> np.ndarray:
    i, j, k = ijk
    return np.array([
        -_W / 2 + i * _W / _COUNTS[0],
        _Y0 + j * _H / _COUNTS[1],
        -_D / 2 + k * _D / _COUNTS[2],
    ])


def _ring(a_range, b_range) -> list[tuple[int, int]]:
    """Region boundary, counter-clockwise in (a, b)."""
    (a0, a1), (b0, b1) = a_range, b_range
    loop = [(p, b0) for p in range(a0, a1)]
    loop += [(a1, q) for q in range(b0, b1)]
    loop += [(p, b1) for p in range(a1, a0, -1)]
    loop += [(a0, q) for q in range(b1, b0, -1)]
    return loop


def _squircle(sa: float, sb: float) -> tuple[float, float]:
    """Map the square [-1, 1]^2 onto the unit disk."""
    return sa * math.sqrt(1.0 - sb * sb / 2.0), sb * math.sqrt(1.0 - sa * sa / 2.0)


def _torso_weights(y: float) -> dict[int, float]:
    w_chest = min(max((y - 1.05) / 0.25, 0.0), 1.0)
    weights = {}
    if w_chest < 1.0:
        weights[0] = 1.0 - w_chest
    if w_chest > 0.0:
        weights[1] = w_chest
    return weights


def _torso_uv(pos: np.ndarray, side_name: str, chart: int) -> tuple[float, float]:
    """Unfold the box into a cross-shaped net seen from the chart's facing direction."""
    s = 1.0 if chart == TORSO_FRONT else -1.0
    x, y, z = s * pos[0], pos[1], s * pos[2]
    depth = _D / 2 - z
    axis = _SIDES[side_name].fixed_axis
    if axis == 2:
        u, v = x, y
    elif axis == 0:
        on_positive = (side_name == "+x") == (s > 0)
        u, v = (_W / 2 + depth, y) if on_positive else (-_W / 2 - depth, y)
    elif side_name == "+y":
        u, v = x, _Y1 + depth
    else:
        u, v = x, _Y0 - depth
    return (u + _W / 2 + _D / 2) / (_W + _D), (v - _Y0 + _D / 2) / (_H + _D)


class _Builder:
    def __init__(self):
        self.positions: list[np.ndarray] = []
        self.axis_points: list[np.ndarray] = []
        self.region: list[str] = []
        self.layer_t: list[float] = []
        self.weights: list[dict[int, float]] = []
        self.quads: list[tuple[int, int, int, int]] = []
        self.quad_chart: list[int] = []
        self.quad_uv: list[list[tuple[float, float]]] = []
        self.lattice: dict[tuple, int] = {}
        self.regressor_rows: dict[int, list[int]] = {}

    def add_vertex(self, pos, axis_point, region, t, weights) -> int:
        self.positions.append(np.asarray(pos, dtype=np.float64))
        self.axis_points.append(np.asarray(axis_point, dtype=np.float64))
        self.region.append(region)
        self.layer_t.append(t)
        self.weights.append(weights)
        return len(self.positions) - 1

    def add_quad(self, corners, chart, uvs):
        self.quads.append(tuple(corners))
        self.quad_chart.append(chart)
        self.quad_uv.append([(min(max(u, 0.0), 1.0), min(max(v, 0.0), 1.0)) for u, v in uvs])

    def build_torso(self):
        nx, ny, nz = _COUNTS
        for i in range(nx + 1):
            for j in range(ny + 1):
                for k in range(nz + 1):
                    if i in (0, nx) or j in (0, ny) or k in (0, nz):
                        pos = _lattice_position((i, j, k))
                        self.lattice[(i, j, k)] = self.add_vertex(
                            pos, (0.0, pos[1], 0.0), "torso", 0.0, _torso_weights(pos[1]))

        holes: dict[str, set] = {name: set() for name in _SIDES}
        for app in _APPENDAGES:
            for p in range(*app.a_range):
                for q in range(*app.b_range):
                    holes[app.side].add((p, q))

        for name, side in _SIDES.items():
            na, nb = _COUNTS[side.axis_a], _COUNTS[side.axis_b]
            for p in range(na):
                for q in range(nb):
                    if (p, q) in holes[name]:
                        continue
                    keys = [_lattice_point(side, *pq) for pq in ((p, q), (p + 1, q), (p + 1, q + 1), (p, q + 1))]
                    corners = [self.lattice[key] for key in keys]
                    if side.fixed_axis == 2:
                        chart = TORSO_FRONT if side.fixed_at_max else TORSO_BACK
                    else:
                        z_mid = np.mean([self.positions[c][2] for c in corners])
                        chart = TORSO_FRONT if z_mid > 0 else TORSO_BACK
                    uvs = [_torso_uv(self.positions[c], name, chart) for c in corners]
                    self.add_quad(corners, chart, uvs)

    def _radius(self, app: _Appendage, layer: int, n: int, radius: float) -> float:
        if app.lower_charts is None:
            if layer == 1:
                return 0.45 * radius
            return radius * (0.6 + 0.4 * math.sin(math.pi * (layer - 1) / max(n - 1, 1)))
        return radius * app.radius_scale * (1.0 - app.taper * layer / n)

    def _layer_weights(self, app: _Appendage, layer: int, mid: int) -> dict[int, float]:
        if layer == 0:
            return {app.parent_joint: 0.5, app.upper_joint: 0.5}
        if app.lower_joint is None or layer < mid:
            return {app.upper_joint: 1.0}
        if layer == mid:
            return {app.upper_joint: 0.5, app.lower_joint: 0.5}
        return {app.lower_joint: 1.0}

    def extrude(self, app: _Appendage, n: int, radius: float):
        side = _SIDES[app.side]
        (a0, a1), (b0, b1) = app.a_range, app.b_range
        na, nb = a1 - a0, b1 - b0
        ac, bc = (a0 + a1) / 2.0, (b0 + b1) / 2.0
        axis = side.normal
        e_a, e_b = np.eye(3)[side.axis_a], np.eye(3)[side.axis_b]
        center0 = _lattice_position(_lattice_point(side, ac, bc))
        mid = max(1, n // 2)

        def normalized(p, q):
            return (p - ac) / (na / 2.0), (q - bc) / (nb / 2.0)

        loop = _ring(app.a_range, app.b_range)
        rings = [[self.lattice[_lattice_point(side, p, q)] for p, q in loop]]
        for index in rings[0]:
            self.weights[index] = self._layer_weights(app, 0, mid)

        centers = [center0]
        for layer in range(1, n + 1):
            center = center0 + axis * app.length * layer / n
            centers.append(center)
            r = self._radius(app, layer, n, radius)
            ring = []
            for p, q in loop:
                dx, dy = _squircle(*normalized(p, q))
                ring.append(self.add_vertex(center + r * (dx * e_a + dy * e_b), center, app.name,
                                            layer / n, self._layer_weights(app, layer, mid)))
            rings.append(ring)

        cap = {pq: rings[n][k] for k, pq in enumerate(loop)}
        r_cap = self._radius(app, n, n, radius)
        for p in range(a0 + 1, a1):
            for q in range(b0 + 1, b1):
                dx, dy = _squircle(*normalized(p, q))
                cap[(p, q)] = self.add_vertex(centers[n] + r_cap * (dx * e_a + dy * e_b), centers[n], app.name,
                                              1.0, self._layer_weights(app, n, mid))

        def split_coords(p, q):
            sa, sb = normalized(p, q)
            return (sa, sb) if app.split_axis == "a" else (sb, sa)

        def half_u(p, q):
            split, lateral = split_coords(p, q)
            return abs(math.atan2(split, lateral)) / math.pi

        k_count = len(loop)
        for layer in range(n):
            if app.lower_charts is None:
                charts, v_of = app.upper_charts, (lambda l: 0.45 * l / n)
            elif layer < mid:
                charts, v_of = app.upper_charts, (lambda l: l / mid)
            else:
                charts, v_of = app.lower_charts, (lambda l: (l - mid) / (n - mid))
            for k in range(k_count):
                k1 = (k + 1) % k_count
                split_mid = split_coords(*loop[k])[0] + split_coords(*loop[k1])[0]
                chart = charts[1] if split_mid > 0 else charts[0]
                corners = (rings[layer][k], rings[layer][k1], rings[layer + 1][k1], rings[layer + 1][k])
                uvs = [(half_u(*loop[k]), v_of(layer)), (half_u(*loop[k1]), v_of(layer)),
                       (half_u(*loop[k1]), v_of(layer + 1)), (half_u(*loop[k]), v_of(layer + 1))]
                self.add_quad(corners, chart, uvs)

        for p in range(a0, a1):
            for q in range(b0, b1):
                pqs = ((p, q), (p + 1, q), (p + 1, q + 1), (p, q + 1))
                corners = [cap[pq] for pq in pqs]
                if app.cap_chart is not None:
                    chart = app.cap_chart
                    uvs = [((pp - a0) / na, (qq - b0) / nb) for pp, qq in pqs]
                else:
                    split_mid = sum(split_coords(*pq)[0] for pq in pqs)
                    chart = app.upper_charts[1] if split_mid > 0 else app.upper_charts[0]
                    uvs = []
                    for pq in pqs:
                        split, lateral = split_coords(*pq)
                        uvs.append((abs(split), 0.55 + 0.45 * (lateral + 1.0) / 2.0))
                self.add_quad(corners, chart, uvs)

        self.regressor_rows[app.upper_joint] = rings[0]
        if app.lower_joint is not None:
            self.regressor_rows[app.lower_joint] = rings[mid]
        return rings[0]


def _shape_dirs(b: _Builder) -> np.ndarray:
    pos = np.stack(b.positions)
    axis_pts = np.stack(b.axis_points)
    region = np.array(b.region)
    t = np.array(b.layer_t)
    dirs = np.zeros((len(pos), 3, NUM_SHAPES))
    torso = region == "torso"
    arms = np.isin(region, ("left_arm", "right_arm"))
    legs = np.isin(region, ("left_leg", "right_leg"))
    head = region == "head"
    side_x = np.sign(axis_pts[:, 0])
    down = np.array([0.0, -1.0, 0.0])

    dirs[:, 1, 0] = 0.02 * (pos[:, 1] - _Y0)
    dirs[:, :, 1] = 0.04 * (pos - axis_pts)
    dirs[arms, 0, 2] = 0.03 * side_x[arms] * t[arms]
    dirs[legs, :, 3] = 0.04 * down * t[legs, None]
    dirs[torso, 0, 4] = 0.03 * pos[torso, 0] / (_W / 2)
    dirs[arms, 0, 4] = 0.03 * side_x[arms]
    head_base = np.array([0.0, _Y1, 0.0])
    dirs[head, :, 5] = 0.05 * (pos[head] - head_base) * t[head, None]
    belly = torso & (pos[:, 2] > 0)
    dirs[belly, 2, 6] = 0.04 * np.exp(-((pos[belly, 1] - 1.1) / 0.12) ** 2) * pos[belly, 2] / (_D / 2)
    lower_torso = np.clip((1.2 - pos[:, 1]) / 0.3, 0.0, 1.0)
    dirs[torso, 0, 7] = 0.02 * pos[torso, 0] / (_W / 2) * lower_torso[torso]
    dirs[legs, 0, 7] = 0.02 * side_x[legs]
    return dirs


@functools.lru_cache(maxsize=8)
def build_toy_biped(n_segments: int = 8, radius: float = 0.1) -> dict:
    """
    Build the toy biped arrays.

    Returns a dict with template, faces, shape_dirs, joint_regressor (dense),
    skin_weights, parents, joint_names, face_chart and corner_uv. Arrays are
    read-only; the result is cached per (n_segments, radius).
    """
    if n_segments < 2:
        raise ValueError(f"n_segments must be >= 2, got {n_segments}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")

    b = _Builder()
    b.build_torso()
    base_rings = {app.name: b.extrude(app, n_segments, radius) for app in _APPENDAGES}
    b.regressor_rows[0] = base_rings["left_leg"] + base_rings["right_leg"]
    b.regressor_rows[1] = base_rings["left_arm"] + base_rings["right_arm"]

    n_joints = len(JOINT_NAMES)
    n_verts = len(b.positions)
    regressor = np.zeros((n_joints, n_verts))
    for joint, rows in b.regressor_rows.items():
        regressor[joint, rows] = 1.0 / len(rows)

    weights = np.zeros((n_verts, n_joints))
    for vertex, entries in enumerate(b.weights):
        for joint, w in entries.items():
            weights[vertex, joint] = w

    faces, face_chart, corner_uv = [], [], []
    for quad, chart, uv in zip(b.quads, b.quad_chart, b.quad_uv):
        for tri in ((0, 1, 2), (0, 2, 3)):
            faces.append([quad[c] for c in tri])
            face_chart.append(chart)
            corner_uv.append([uv[c] for c in tri])

    # torso lattice points inside an appendage opening belong to no quad
    faces = np.asarray(faces, dtype=np.int64)
    keep = np.zeros(n_verts, dtype=bool)
    keep[faces.ravel()] = True
    remap = np.cumsum(keep) - 1

    arrays = {
        "template": np.stack(b.positions)[keep],
        "faces": remap[faces],
        "shape_dirs": _shape_dirs(b)[keep],
        "joint_regressor": regressor[:, keep],
        "skin_weights": weights[keep],
        "face_chart": np.asarray(face_chart, dtype=np.int64),
        "corner_uv": np.asarray(corner_uv, dtype=np.float64),
    }
    for value in arrays.values():
        value.setflags(write=False)
    arrays["parents"] = PARENTS
    arrays["joint_names"] = JOINT_NAMES
    return arrays
