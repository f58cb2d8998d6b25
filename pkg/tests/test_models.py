"""Tests for data models."""

import pytest
from pydantic import ValidationError

from errors import DuplicateIdError
from models import (CameraModel, CameraRig, CocoDataset, CocoImage, DenseAnnotation, EvalReport, NoiseModel,
                    RleMask, TaskScores)


def camera(**overrides):
    fields = dict(fx=100.0, fy=100.0, cx=49.5, cy=29.5, width=100, height=60)
    fields.update(overrides)
    return CameraModel(**fields)


def annotation(ann_id=1, **overrides):
    fields = dict(id=ann_id, image_id=1, bbox=(0.0, 0.0, 2.0, 2.0), area=4.0,
                  segmentation=RleMask(size=(2, 2), counts=[0, 4]))
    fields.update(overrides)
    return DenseAnnotation(**fields)


class TestCameraRig:
    """Test CameraRig model."""

    def test_noise_filled_per_camera(self):
        """A rig without noise models gets a default one per camera."""
        rig = CameraRig(cameras=[camera(), camera(cx=10.0)])
        assert rig.noise == [NoiseModel(), NoiseModel()]
        assert rig.noise[0].gaussian_sigma == 0.0

    def test_noise_count_must_match(self):
        with pytest.raises(ValidationError):
            CameraRig(cameras=[camera()], noise=[NoiseModel(), NoiseModel()])

    def test_needs_a_camera(self):
        with pytest.raises(ValidationError):
            CameraRig(cameras=[])

    def test_camera_is_frozen(self):
        with pytest.raises(ValidationError):
            camera().fx = 5.0

    def test_camera_properties(self):
        cam = camera(world_from_camera=[[1, 0, 0, 1], [0, 1, 0, 2], [0, 0, 1, 3], [0, 0, 0, 1]])
        assert list(cam.center) == [1.0, 2.0, 3.0]
        assert not cam.has_distortion
        assert camera(k1=-0.1).has_distortion

    def test_noise_sigma_non_negative(self):
        with pytest.raises(ValidationError):
            NoiseModel(gaussian_sigma=-0.1)


class TestDenseAnnotation:
    """Test DenseAnnotation model."""

    def test_defaults(self):
        ann = annotation()
        assert ann.num_points == 0
        assert ann.category_id == 1
        assert ann.score is None

    def test_point_arrays_must_agree(self):
        with pytest.raises(ValidationError):
            annotation(dp_x=[1.0], dp_y=[1.0], dp_I=[1], dp_U=[0.5], dp_V=[])

    def test_keypoints_are_triples(self):
        with pytest.raises(ValidationError):
            annotation(keypoints=[1.0, 2.0])

    def test_rle_size(self):
        mask = RleMask(size=(3, 5), counts=[15])
        assert (mask.height, mask.width) == (3, 5)


class TestCocoDataset:
    """Test CocoDataset model."""

    def test_default_category(self):
        dataset = CocoDataset()
        assert [c.name for c in dataset.categories] == ["person"]

    def test_duplicate_annotation_id(self):
        """Duplicate ids raise with the offending key path."""
        with pytest.raises(DuplicateIdError) as info:
            CocoDataset(annotations=[annotation(1), annotation(2), annotation(1)])
        assert info.value.key_path == "annotations.2.id"

    def test_unique_ids_accepted(self):
        images = [CocoImage(id=i, file_name=f"{i}.png", width=2, height=2) for i in (1, 2)]
        assert len(CocoDataset(images=images, annotations=[annotation(1)]).images) == 2


class TestEvalReport:
    """Test EvalReport and TaskScores."""

    def test_scores_are_percentages(self):
        with pytest.raises(ValidationError):
            TaskScores(ap=101.0)
        with pytest.raises(ValidationError):
            TaskScores(ar=-1.0)

    def test_table(self):
        report = EvalReport(tasks={"gps": TaskScores(ap=50.0, ap50=75.5)}, num_images=3, num_gt=4, num_detections=5)
        lines = report.to_table().splitlines()
        assert lines[0].split() == ["Task", "AP", "AP50", "AP75", "AR", "AR50", "AR75"]
        assert lines[2].split() == ["gps", "50.00", "75.50", "0.00", "0.00", "0.00", "0.00"]
        assert lines[-1] == "images: 3  gt: 4  detections: 5"
