"""Tests for label image and raw array files."""

import numpy as np
import pytest

from errors import DimensionError, MissingFileError
from image_io import (
    load_depth,
    load_iuv,
    load_rgb,
    load_seg,
    save_depth,
    save_iuv,
    save_rgb,
    save_seg,
    write_text_atomic,
)


@pytest.fixture
def iuv():
    rng = np.random.default_rng(5)
    data = np.zeros((6, 8, 3))
    data[..., 0] = rng.integers(0, 25, (6, 8))
    data[..., 1:] = rng.random((6, 8, 2))
    return data


class TestLabelImages:
    """Test label file formats."""

    def test_iuv_8bit(self, iuv, tmp_path):
        """Charts are exact; U and V are quantized to 1/255."""
        paths = save_iuv(tmp_path / "f_iuv.png", iuv)
        assert paths == [tmp_path / "f_iuv.png"]
        loaded = load_iuv(paths[0])
        assert np.array_equal(loaded[..., 0], iuv[..., 0])
        assert np.abs(loaded[..., 1:] - iuv[..., 1:]).max() <= 0.5 / 255.0 + 1e-12

    def test_iuv_16bit_files(self, iuv, tmp_path):
        """16-bit mode adds separate U and V images."""
        paths = save_iuv(tmp_path / "f_iuv.png", iuv, sixteen_bit=True)
        assert [p.name for p in paths] == ["f_iuv.png", "f_iuv_u16.png", "f_iuv_v16.png"]
        assert all(p.is_file() for p in paths)

    def test_seg_palette(self, tmp_path):
        seg = np.arange(48, dtype=np.uint8).reshape(6, 8) % 15
        save_seg(tmp_path / "seg.png", seg)
        assert np.array_equal(load_seg(tmp_path / "seg.png"), seg)

    def test_depth_keeps_inf(self, tmp_path):
        depth = np.array([[1.5, np.inf], [2.25, 3.0]])
        save_depth(tmp_path / "d.f32", depth)
        assert np.array_equal(load_depth(tmp_path / "d.f32", 2, 2), depth.astype(np.float32))

    def test_depth_wrong_size(self, tmp_path):
        save_depth(tmp_path / "d.f32", np.zeros((2, 2)))
        with pytest.raises(DimensionError):
            load_depth(tmp_path / "d.f32", 3, 2)

    def test_rgb(self, tmp_path):
        rgb = np.random.default_rng(0).random((5, 7, 3))
        save_rgb(tmp_path / "img.png", rgb)
        assert np.abs(load_rgb(tmp_path / "img.png") - rgb).max() <= 0.5 / 255.0 + 1e-12

    def test_missing(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_seg(tmp_path / "absent.png")


class TestAtomicWrites:
    def test_no_temp_files_left(self, tmp_path):
        write_text_atomic(tmp_path / "out" / "report.txt", "ok\n")
        assert [p.name for p in (tmp_path / "out").iterdir()] == ["report.txt"]
        assert (tmp_path / "out" / "report.txt").read_text() == "ok\n"
