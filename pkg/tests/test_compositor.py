"""Tests for occluder compositing, label updates and color harmonization."""

import math

import numpy as np
import pytest
from scipy import special

from compositor import (
    OccluderSprite,
    Placement,
    alpha_blend,
    default_band,
    feather_alpha,
    harmonize,
    load_occluders,
    prepare_sprite,
    sample_placement,
    update_labels_for_occlusion,
)
from errors import DimensionError, ParameterError, ResourceError
from image_io import save_rgba
from models import DenseAnnotation
from rle import rle_area, rle_encode


def solid_sprite(h=5, w=5, color=1.0, name="box"):
    rgba = np.ones((h, w, 4))
    rgba[..., :3] = color
    return OccluderSprite(rgba, name)


@pytest.fixture
def person():
    """10x10 person at rows/cols 5..14 of a 20x20 frame."""
    mask = np.zeros((20, 20), dtype=bool)
    mask[5:15, 5:15] = True
    return DenseAnnotation(
        id=1, image_id=1, bbox=(5.0, 5.0, 10.0, 10.0), area=100.0, segmentation=rle_encode(mask),
        dp_x=[64.0, 200.0], dp_y=[64.0, 200.0], dp_I=[1, 2], dp_U=[0.1, 0.2], dp_V=[0.3, 0.4],
        dp_masks=[rle_encode(np.ones((256, 256), dtype=bool))],
        keypoints=[7.0, 7.0, 2, 12.0, 12.0, 2, 12.0, 12.0, 1], num_keypoints=3,
    )


@pytest.fixture
def corner_alpha():
    alpha = np.zeros((20, 20))
    alpha[10:, 10:] = 1.0
    return alpha


class TestSprites:
    """Test sprite validation and loading."""

    def test_requires_rgba(self):
        with pytest.raises(DimensionError):
            OccluderSprite(np.ones((4, 4, 3)), "rgb")

    def test_empty_alpha(self):
        with pytest.raises(ParameterError):
            OccluderSprite(np.zeros((4, 4, 4)), "empty")

    def test_load_sorted(self, tmp_path):
        for name in ("b", "a"):
            save_rgba(tmp_path / f"{name}.png", np.ones((3, 3, 4)))
        assert [s.source_id for s in load_occluders(tmp_path)] == ["a", "b"]

    def test_load_empty_dir(self, tmp_path):
        with pytest.raises(ResourceError):
            load_occluders(tmp_path)

    def test_default_band(self):
        assert default_band(solid_sprite(10, 10)) == (2.0, 1.0)
        assert default_band(solid_sprite(200, 100)) == pytest.approx((6.0, 3.0))


class TestPlacement:
    """Test random placement sampling."""

    def test_within_ranges(self):
        sprite = solid_sprite(20, 10)
        bbox = (10.0, 20.0, 30.0, 40.0)
        for seed in range(20):
            p = sample_placement(np.random.default_rng(seed), bbox, sprite)
            size = p.scale * sprite.max_dimension
            assert 0.2 * 50.0 <= size <= 0.7 * 50.0
            assert 25.0 - 16.5 <= p.center[0] <= 25.0 + 16.5
            assert 40.0 - 22.0 <= p.center[1] <= 40.0 + 22.0
            assert abs(p.rotation) <= math.radians(15.0)

    def test_seeded(self):
        sprite = solid_sprite()
        a = sample_placement(np.random.default_rng(3), (0, 0, 10, 10), sprite)
        assert a == sample_placement(np.random.default_rng(3), (0, 0, 10, 10), sprite)

    def test_empty_bbox(self):
        with pytest.raises(ParameterError):
            sample_placement(np.random.default_rng(0), (0, 0, 0, 10), solid_sprite())

    def test_scale_positive(self):
        with pytest.raises(ParameterError):
            Placement(scale=0.0, center=(0.0, 0.0), rotation=0.0)


class TestFeather:
    """Test edge feathering."""

    def test_band_only(self):
        """Deep inside stays 1, far outside stays 0, the edge is soft."""
        mask = np.zeros((40, 40))
        mask[10:30, 10:30] = 1.0
        alpha = feather_alpha(mask, band_px=3.0, sigma_px=1.5)
        assert alpha[20, 20] == 1.0
        assert alpha[0, 0] == 0.0
        assert 0.0 < alpha[20, 10] < 1.0
        assert 0.0 < alpha[20, 9] < 1.0
        assert alpha.min() >= 0.0 and alpha.max() <= 1.0

    def test_straight_edge_profile(self):
        """A straight edge follows the Gaussian step evaluated at pixel centers."""
        mask = np.zeros((10, 40))
        mask[:, :20] = 1.0
        alpha = feather_alpha(mask, band_px=6.0, sigma_px=2.0)
        expected = special.ndtr((19.5 - np.arange(40)) / 2.0)
        for row in alpha:
            assert np.allclose(row, expected, atol=1e-3)

    def test_band_too_small(self):
        with pytest.raises(ParameterError):
            feather_alpha(np.ones((4, 4)), band_px=0.5, sigma_px=1.0)

    def test_degenerate_masks(self):
        assert not feather_alpha(np.zeros((5, 5)), 2.0, 1.0).any()
        assert feather_alpha(np.ones((5, 5)), 2.0, 1.0).min() == 1.0

    def test_prepare_pads(self):
        """Padding leaves room for the feather to fall off to zero."""
        rgb, alpha = prepare_sprite(solid_sprite(10, 10))
        assert rgb.shape[:2] == alpha.shape
        assert alpha.shape[0] > 10
        assert alpha[0, 0] == 0.0
        assert alpha[alpha.shape[0] // 2, alpha.shape[1] // 2] == 1.0


class TestAlphaBlend:
    """Test compositing a sprite onto a frame."""

    def test_opaque_square(self):
        base = np.zeros((20, 20, 3))
        sprite_rgb, sprite_alpha = np.ones((5, 5, 3)), np.ones((5, 5))
        out, alpha = alpha_blend(base, sprite_rgb, sprite_alpha, Placement(1.0, (10.0, 10.0), 0.0))
        assert np.allclose(out[10, 10], 1.0)
        assert np.allclose(out[11, 9], 1.0)
        assert alpha[10, 10] == pytest.approx(1.0)
        assert np.array_equal(out[alpha == 0.0], base[alpha == 0.0])
        assert alpha[0, 0] == 0.0

    def test_partial_alpha(self):
        base = np.zeros((9, 9, 3))
        out, _ = alpha_blend(base, np.ones((3, 3, 3)), np.full((3, 3), 0.25), Placement(1.0, (4.0, 4.0), 0.0))
        assert np.allclose(out[4, 4], 0.25)

    def test_rotated_square_center(self):
        base = np.zeros((20, 20, 3))
        out, _ = alpha_blend(base, np.ones((5, 5, 3)), np.ones((5, 5)), Placement(2.0, (10.0, 10.0), math.pi / 4))
        assert np.allclose(out[10, 10], 1.0)


class TestOcclusionLabels:
    """Test dropping labels under an occluder."""

    def test_points_mask_and_keypoints(self, person, corner_alpha):
        updated = update_labels_for_occlusion(person, corner_alpha)
        assert updated.dp_x == [64.0]
        assert updated.dp_I == [1]
        assert updated.area == 75.0
        assert rle_area(updated.segmentation) == 75
        assert updated.bbox == person.bbox
        assert updated.keypoints[2::3] == [2, 1, 1]
        assert rle_area(updated.dp_masks[0]) == 256 * 256 - 128 * 128

    def test_disabled(self, person, corner_alpha):
        assert update_labels_for_occlusion(person, corner_alpha, enabled=False) is person

    def test_threshold_is_strict(self, person):
        """Alpha exactly at the threshold does not occlude."""
        assert update_labels_for_occlusion(person, np.full((20, 20), 0.5)) is person


class TestHarmonize:
    """Test foreground color transfer."""

    def image_and_mask(self):
        rng = np.random.default_rng(9)
        image = rng.random((16, 16, 3)) * 0.5
        mask = np.zeros((16, 16), dtype=bool)
        mask[4:12, 4:12] = True
        image[mask] += 0.4
        return image, mask

    def test_background_untouched(self):
        image, mask = self.image_and_mask()
        out = harmonize(image, mask, 0.7)
        assert np.array_equal(out[~mask], image[~mask])

    def test_pulls_toward_background(self):
        image, mask = self.image_and_mask()
        out = harmonize(image, mask, 1.0)
        before = abs(image[mask].mean() - image[~mask].mean())
        after = abs(out[mask].mean() - image[~mask].mean())
        assert after < before

    def test_zero_strength_is_identity(self):
        image, mask = self.image_and_mask()
        assert np.array_equal(harmonize(image, mask, 0.0), image)

    def test_flat_foreground(self):
        """A constant foreground only has its mean shifted."""
        image, mask = self.image_and_mask()
        image[mask] = 0.8
        out = harmonize(image, mask, 1.0)
        assert np.isfinite(out).all()

    def test_flat_background_leaves_foreground(self):
        """A background with no spread in any channel transfers nothing."""
        image, mask = self.image_and_mask()
        image[~mask] = 0.3
        out = harmonize(image, mask, 1.0)
        assert np.allclose(out, image, atol=1e-9)

    def test_gray_background_moves_luma_only(self):
        """Flat chroma in the background keeps foreground chroma; luma still moves."""
        rng = np.random.default_rng(4)
        image, mask = self.image_and_mask()
        image[mask] = 0.4 + 0.2 * rng.random((mask.sum(), 3))
        image[~mask] = (0.3 + 0.2 * rng.random((~mask).sum()))[:, None]
        out = harmonize(image, mask, 1.0)
        shift = out[mask] - image[mask]
        assert np.all((out > 0.0) & (out < 1.0))
        assert np.allclose(shift, shift[:, :1], atol=1e-9)
        assert not np.allclose(shift, 0.0)

    def test_errors(self):
        image, mask = self.image_and_mask()
        with pytest.raises(ParameterError):
            harmonize(image, np.zeros_like(mask), 0.5)
        with pytest.raises(ParameterError):
            harmonize(image, np.ones_like(mask), 0.5)
        with pytest.raises(ParameterError):
            harmonize(image, mask, 1.5)
        with pytest.raises(DimensionError):
            harmonize(image, mask[:8], 0.5)
