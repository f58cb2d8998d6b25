"""Shared fixtures: toy biped, atlas, small cameras and an on-disk toy resource set."""

import numpy as np
import pytest

from atlas import UvAtlas, load_chart_parts, make_toy_atlas
from body_model import PosedMesh, make_toy_biped, vertex_normals
from dataset import load_resources
from models import CameraModel
from scene_config import load_scene_config
from toy_assets import write_toy_resources

TOY_FRAMES = 6
TOY_SEED = 7


def _quad(x0, x1, y0, y1, z):
    # Wound so the face normal points at a camera on the -z side
    return [(x0, y0, z), (x0, y1, z), (x1, y1, z), (x1, y0, z)]


@pytest.fixture(scope="session")
def toy_model():
    return make_toy_biped(8, 0.1)


@pytest.fixture(scope="session")
def toy_atlas():
    return make_toy_atlas(8)


@pytest.fixture
def pinhole():
    """Factory for a distortion-free camera at the origin looking down +z."""
    def build(width=100, height=60, focal=100.0, **kwargs):
        return CameraModel(fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                           width=width, height=height, **kwargs)
    return build


@pytest.fixture
def two_quads():
    """
    Quad A at z=2 (x, y in [-0.5, 0.5]) in front of quad B at z=3
    (x in [0, 1.2], y in [-0.3, 0.3]). Two triangles each.
    """
    vertices = np.array(_quad(-0.5, 0.5, -0.5, 0.5, 2.0) + _quad(0.0, 1.2, -0.3, 0.3, 3.0), dtype=np.float64)
    faces = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]], dtype=np.int64)
    return PosedMesh(vertices=vertices, faces=faces, normals=vertex_normals(vertices, faces))


@pytest.fixture
def quad_atlas(two_quads):
    """Chart 1 on quad A, chart 2 on quad B; UVs follow x/y across each quad."""
    chart_to_part, part_names = load_chart_parts()
    uv = [[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)], [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0)]]
    return UvAtlas(faces=two_quads.faces, face_chart=np.array([1, 1, 2, 2]),
                   corner_uv=np.array(uv + uv, dtype=np.float64),
                   chart_to_part=dict(chart_to_part), part_names=dict(part_names))


@pytest.fixture
def flat_texture():
    """Chart-packed texture (tile 8) where every chart tile has its own gray level."""
    texture = np.zeros((48, 32, 3))
    for chart in range(1, 25):
        col, row = (chart - 1) // 6, (chart - 1) % 6
        texture[row * 8:(row + 1) * 8, col * 8:(col + 1) * 8] = chart / 25.0
    return texture


@pytest.fixture(scope="session")
def toy_scene(tmp_path_factory):
    """Path of a toy scene.json with its resources next to it."""
    root = tmp_path_factory.mktemp("toy")
    return write_toy_resources(root, num_frames=TOY_FRAMES, master_seed=TOY_SEED)


@pytest.fixture
def toy_config(toy_scene):
    return load_scene_config(toy_scene)


@pytest.fixture(scope="session")
def toy_resources(toy_scene):
    return load_resources(load_scene_config(toy_scene))
