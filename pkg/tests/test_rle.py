"""Tests for COCO run-length encoding."""

import numpy as np
import pytest

from errors import RleError
from models import RleMask
from rle import rle_area, rle_decode, rle_encode


class TestRle:
    """Test column-major RLE."""

    def test_encode_column_major(self):
        """Runs follow columns, starting with a background run."""
        mask = np.array([[0, 1, 1], [1, 1, 0]], dtype=bool)
        rle = rle_encode(mask)
        assert rle.size == (2, 3)
        assert rle.counts == [1, 4, 1]
        assert rle_area(rle) == 4

    def test_leading_foreground(self):
        """A mask starting with foreground gets an empty first run."""
        mask = np.array([[1, 0], [0, 0]], dtype=bool)
        assert rle_encode(mask).counts == [0, 1, 3]

    def test_decode(self):
        mask = rle_decode(RleMask(size=(2, 3), counts=[1, 4, 1]))
        assert np.array_equal(mask, [[0, 1, 1], [1, 1, 0]])

    def test_random_mask(self):
        mask = np.random.default_rng(4).random((17, 23)) > 0.6
        rle = rle_encode(mask)
        assert np.array_equal(rle_decode(rle), mask)
        assert rle_area(rle) == mask.sum()

    def test_all_background(self):
        rle = rle_encode(np.zeros((3, 4), dtype=bool))
        assert rle.counts == [12]
        assert rle_area(rle) == 0

    def test_sum_mismatch(self):
        with pytest.raises(RleError):
            rle_decode(RleMask(size=(2, 2), counts=[1, 2]))

    def test_negative_run(self):
        with pytest.raises(RleError):
            rle_decode(RleMask(size=(2, 2), counts=[5, -1]))

    def test_empty_mask(self):
        with pytest.raises(RleError):
            rle_encode(np.zeros((0, 3), dtype=bool))

    def test_matches_reference_tools(self):
        """Uncompressed runs decode identically with pycocotools when it is installed."""
        mask_utils = pytest.importorskip("pycocotools.mask")
        mask = np.random.default_rng(8).random((11, 7)) > 0.5
        rle = rle_encode(mask)
        compressed = mask_utils.frPyObjects({"size": list(rle.size), "counts": rle.counts}, *rle.size)
        assert np.array_equal(mask_utils.decode(compressed).astype(bool), mask)
        assert int(mask_utils.area(compressed)) == rle_area(rle)
