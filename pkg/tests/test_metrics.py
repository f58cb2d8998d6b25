"""Tests for GPS/GPSm scoring, matching and the evaluation report."""

import json
import math

import numpy as np
import pytest

from errors import CocoFormatError, DimensionError, IdMismatchError, ResourceError
from metrics import (
    EvalSurface,
    GeodesicCache,
    PointSet,
    PredictionLookup,
    bbox_iou,
    evaluate,
    gpsm_instance,
    gps_instance,
    greedy_match,
    interpolated_ap,
    mask_iou,
    read_predictions,
)
from models import CocoDataset, CocoImage, DenseAnnotation
from rle import rle_encode
from scene_config import MetricsConfig

FRAME = 40
SIZE = 20
CORNERS = [(1, 0.0, 0.0), (1, 0.0, 1.0), (1, 1.0, 1.0), (1, 1.0, 0.0),
           (2, 0.0, 0.0), (2, 0.0, 1.0), (2, 1.0, 1.0), (2, 1.0, 0.0)]


def instance(ann_id, image_id, x0, y0, samples=CORNERS, score=None):
    """A SIZE x SIZE square person at (x0, y0), one dense point per sample on distinct pixels."""
    mask = np.zeros((FRAME, FRAME), dtype=bool)
    mask[y0:y0 + SIZE, x0:x0 + SIZE] = True
    offsets = [2 * k + 1 for k in range(len(samples))]
    return DenseAnnotation(
        id=ann_id, image_id=image_id, bbox=(float(x0), float(y0), float(SIZE), float(SIZE)),
        area=float(mask.sum()), segmentation=rle_encode(mask),
        dp_x=[(o + 0.5) * 256.0 / SIZE for o in offsets],
        dp_y=[(o + 0.5) * 256.0 / SIZE for o in offsets],
        dp_I=[s[0] for s in samples], dp_U=[s[1] for s in samples], dp_V=[s[2] for s in samples],
        score=score,
    )


def dataset(annotations, image_ids=(1,)):
    images = [CocoImage(id=i, file_name=f"images/{i:06d}.png", width=FRAME, height=FRAME) for i in image_ids]
    return CocoDataset(images=images, annotations=list(annotations))


@pytest.fixture
def surface(two_quads, quad_atlas):
    return EvalSurface(atlas=quad_atlas, geodesics=GeodesicCache(two_quads.vertices, two_quads.faces))


class TestInstanceScores:
    """Test per-instance similarities."""

    def test_gps_closed_form(self, quad_atlas):
        """A geodesic error of kappa * sqrt(2 ln 2) scores exactly one half."""
        kappa = 0.255
        g = kappa * math.sqrt(2.0 * math.log(2.0))
        points = PointSet(rows=np.array([0]), cols=np.array([0]), charts=np.array([1]),
                          u=np.array([0.0]), v=np.array([0.0]))

        def lookup(rows, cols):
            return np.array([1]), np.array([1.0]), np.array([1.0])

        def geodesics(source, targets):
            assert (source, list(targets)) == (0, [2])
            return np.array([g])

        assert gps_instance(points, lookup, quad_atlas, geodesics, kappa) == pytest.approx(0.5)

    def test_background_prediction_scores_zero(self, quad_atlas):
        points = PointSet(rows=np.array([0, 1]), cols=np.array([0, 1]), charts=np.array([1, 1]),
                          u=np.array([0.0, 1.0]), v=np.array([0.0, 1.0]))

        def lookup(rows, cols):
            return np.array([1, 0]), np.array([0.0, 0.0]), np.array([0.0, 0.0])

        score = gps_instance(points, lookup, quad_atlas, lambda s, t: np.zeros(len(t)), 0.255)
        assert score == pytest.approx(0.5)

    def test_mask_iou(self):
        a = np.array([[1, 1, 0]], dtype=bool)
        b = np.array([[0, 1, 1]], dtype=bool)
        assert mask_iou(a, b) == pytest.approx(1 / 3)
        assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
        with pytest.raises(DimensionError):
            mask_iou(a, np.zeros((2, 3)))

    def test_gpsm(self):
        """GPSm is the geometric mean of GPS and mask IoU."""
        mask = np.ones((2, 2), dtype=bool)
        half = np.array([[1, 1], [0, 0]], dtype=bool)
        assert gpsm_instance(0.81, mask, mask) == pytest.approx(0.9)
        assert gpsm_instance(0.5, mask, half) == pytest.approx(0.5)
        assert gpsm_instance(0.9, np.zeros((2, 2)), np.zeros((2, 2))) is None

    def test_bbox_iou(self):
        assert bbox_iou((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(1 / 7)
        assert bbox_iou((0, 0, 1, 1), (5, 5, 1, 1)) == 0.0

    def test_prediction_lookup(self):
        """Pixels off the predicted mask are background; on it the nearest point answers."""
        det = instance(1, 1, 0, 0)
        lookup = PredictionLookup(det)
        charts, u, v = lookup(np.array([1, 30, 2]), np.array([1, 30, 1]))
        assert list(charts) == [1, 0, 1]
        assert (u[0], v[0]) == (0.0, 0.0)


class TestMatching:
    """Test greedy matching and AP interpolation."""

    def test_greedy_hand_case(self):
        similarity = np.array([[0.9, 0.8], [0.85, 0.1]])
        tp, ignored = greedy_match(similarity, 0.5)
        assert list(tp) == [True, False]
        assert not ignored.any()

    def test_tie_goes_to_lowest_index(self):
        tp, _ = greedy_match(np.array([[0.7, 0.7], [0.7, 0.7]]), 0.5)
        assert list(tp) == [True, True]
        tp, _ = greedy_match(np.array([[0.7, 0.7], [0.6, 0.0]]), 0.5)
        assert list(tp) == [True, False]

    def test_ignored_gt_absorbs_detection(self):
        tp, ignored = greedy_match(np.array([[0.9, 0.2]]), 0.5, gt_ignore=np.array([True, False]))
        assert list(tp) == [False]
        assert list(ignored) == [True]

    def test_interpolated_ap(self):
        """TP, FP, TP against two GT: precision envelope 1 up to recall 0.5, then 2/3."""
        ap, recall = interpolated_ap(np.array([True, False, True]), np.array([0.9, 0.8, 0.7]), 2)
        assert ap == pytest.approx((51 * 1.0 + 50 * 2.0 / 3.0) / 101)
        assert recall == 1.0

    def test_no_gt(self):
        assert interpolated_ap(np.array([True]), np.array([1.0]), 0) == (0.0, 0.0)


class TestEvaluate:
    """Test end-to-end evaluation on square instances over the two-quad surface."""

    def test_perfect_predictions(self, surface):
        gt = dataset([instance(1, 1, 2, 2), instance(2, 2, 10, 15)], image_ids=(1, 2))
        preds = [instance(1, 1, 2, 2, score=0.9), instance(2, 2, 10, 15)]
        report = evaluate(gt, preds, MetricsConfig(), surface)
        for task in ("bbox", "gps", "gpsm", "segm"):
            scores = report.tasks[task]
            assert (scores.ap, scores.ap50, scores.ap75, scores.ar) == (100.0, 100.0, 100.0, 100.0), task
        assert report.num_gt == 2 and report.num_detections == 2

    def test_disjoint_predictions(self, surface):
        gt = dataset([instance(1, 1, 0, 0)])
        report = evaluate(gt, [instance(1, 1, 20, 20, score=0.5)], MetricsConfig(), surface)
        assert all(scores.ap == 0.0 for scores in report.tasks.values())

    def test_flipped_u_lowers_gps(self, surface):
        """Mirrored U moves every point to a far vertex: masks still match, GPS does not."""
        gt = dataset([instance(1, 1, 5, 5)])
        flipped = [(chart, 1.0 - u, v) for chart, u, v in CORNERS]
        report = evaluate(gt, [instance(1, 1, 5, 5, samples=flipped)], MetricsConfig(), surface)
        assert report.tasks["bbox"].ap == 100.0
        assert report.tasks["segm"].ap == 100.0
        assert report.tasks["gps"].ap < 100.0
        assert report.tasks["gpsm"].ap < 100.0

    def test_zero_gt_scores_zero(self, surface):
        report = evaluate(dataset([]), [instance(1, 1, 0, 0)], MetricsConfig(), surface)
        assert report.tasks["gps"].ap == 0.0
        assert report.tasks["bbox"].ap == 0.0

    def test_gt_without_points_is_ignored(self, surface):
        """A detection on a point-less GT neither helps nor hurts GPS."""
        empty = instance(2, 1, 20, 20, samples=[])
        gt = dataset([instance(1, 1, 0, 0), empty])
        preds = [instance(1, 1, 0, 0, score=0.6), instance(2, 1, 20, 20, samples=[], score=0.9)]
        report = evaluate(gt, preds, MetricsConfig(), surface)
        assert report.tasks["gps"].ap == 100.0
        assert report.tasks["segm"].ap == 100.0

    def test_workers_match_serial(self, surface):
        gt = dataset([instance(1, 1, 2, 2), instance(2, 2, 10, 15)], image_ids=(1, 2))
        flipped = [(chart, 1.0 - u, v) for chart, u, v in CORNERS]
        preds = [instance(1, 1, 2, 2, score=0.9), instance(2, 2, 10, 15, samples=flipped, score=0.4)]
        serial = evaluate(gt, preds, MetricsConfig(), surface)
        threaded = evaluate(gt, preds, MetricsConfig(), surface, workers=2)
        assert serial == threaded

    def test_unknown_image(self, surface):
        with pytest.raises(IdMismatchError):
            evaluate(dataset([instance(1, 1, 0, 0)]), [instance(1, 99, 0, 0)], MetricsConfig(), surface)

    def test_report_table(self, surface):
        report = evaluate(dataset([instance(1, 1, 0, 0)]), [instance(1, 1, 0, 0)], MetricsConfig(), surface)
        table = report.to_table()
        assert table.splitlines()[0].split() == ["Task", "AP", "AP50", "AP75", "AR", "AR50", "AR75"]
        assert "gps" in table and "images: 1" in table


class TestReadPredictions:
    def test_list_of_results(self, tmp_path):
        path = tmp_path / "pred.json"
        path.write_text(json.dumps([instance(1, 1, 0, 0, score=0.3).model_dump(mode="json")]))
        preds = read_predictions(path)
        assert isinstance(preds, list) and preds[0].score == 0.3

    def test_dataset(self, tmp_path):
        path = tmp_path / "pred.json"
        path.write_text(dataset([instance(1, 1, 0, 0)]).model_dump_json())
        assert isinstance(read_predictions(path), CocoDataset)

    def test_bad_record_has_key_path(self, tmp_path):
        path = tmp_path / "pred.json"
        path.write_text(json.dumps([{"id": 1}]))
        with pytest.raises(CocoFormatError) as info:
            read_predictions(path)
        assert info.value.key_path.startswith("0.")

    def test_missing(self, tmp_path):
        with pytest.raises(ResourceError):
            read_predictions(tmp_path / "absent.json")
