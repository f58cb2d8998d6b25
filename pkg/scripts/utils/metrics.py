"""
Dense-correspondence evaluation.

Per-instance similarities (bbox IoU, mask IoU, GPS, GPSm) feed a COCO-style
greedy matcher; AP uses 101-point interpolated precision and is averaged over
IoU-like thresholds. All reported numbers are percentages.
"""

import functools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from pydantic import TypeAdapter, ValidationError
from scipy.spatial import cKDTree

from atlas import UvAtlas, iuv_to_vertices
from errors import CocoFormatError, DimensionError, IdMismatchError, ParameterError, ResourceError
from geometry import edge_graph, geodesic_distances
from models import CocoDataset, DenseAnnotation, EvalReport, TaskScores
from rle import rle_decode
from scene_config import MetricsConfig

logger = logging.getLogger(__name__)

TASKS = ("bbox", "gps", "gpsm", "segm")
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
BBOX_FRAME = 256.0


# Point sets and lookups

@dataclass(frozen=True, eq=False)
class PointSet:
    """Dense points of one instance in image pixels."""
    rows: np.ndarray
    cols: np.ndarray
    charts: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def from_annotation(cls, annotation: DenseAnnotation) -> "PointSet":
        bx, by, bw, bh = annotation.bbox
        cols = np.floor(bx + np.asarray(annotation.dp_x, dtype=np.float64) * bw / BBOX_FRAME).astype(np.int64)
        rows = np.floor(by + np.asarray(annotation.dp_y, dtype=np.float64) * bh / BBOX_FRAME).astype(np.int64)
        return cls(rows=rows, cols=cols,
                   charts=np.asarray(annotation.dp_I, dtype=np.int64),
                   u=np.asarray(annotation.dp_U, dtype=np.float64),
                   v=np.asarray(annotation.dp_V, dtype=np.float64))


IuvLookup = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


class PredictionLookup:
    """
    Predicted IUV at arbitrary pixels.

    A pixel outside the prediction's foreground mask is background (chart 0).
    Inside it, the nearest predicted point supplies the IUV.
    """

    def __init__(self, prediction: DenseAnnotation):
        self.points = PointSet.from_annotation(prediction)
        self.foreground = rle_decode(prediction.segmentation)
        self._tree = cKDTree(np.column_stack([self.points.rows, self.points.cols])) if len(self.points) else None

    def __call__(self, rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows, cols = np.asarray(rows), np.asarray(cols)
        height, width = self.foreground.shape
        charts = np.zeros(len(rows), dtype=np.int64)
        u, v = np.zeros(len(rows)), np.zeros(len(rows))
        if self._tree is None:
            return charts, u, v
        inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        on_fg = np.zeros(len(rows), dtype=bool)
        on_fg[inside] = self.foreground[rows[inside], cols[inside]]
        if on_fg.any():
            _, nearest = self._tree.query(np.column_stack([rows[on_fg], cols[on_fg]]))
            charts[on_fg] = self.points.charts[nearest]
            u[on_fg], v[on_fg] = self.points.u[nearest], self.points.v[nearest]
        return charts, u, v


class GeodesicCache:
    """Geodesic rows on the evaluation mesh, computed on first use and kept LRU by source vertex."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, maxsize: int = 4096):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces)
        self.graph = edge_graph(self.vertices, self.faces)
        self._row = functools.lru_cache(maxsize=maxsize)(self._compute_row)

    def _compute_row(self, source: int) -> np.ndarray:
        row = geodesic_distances(self, source, graph=self.graph)
        row.setflags(write=False)
        return row

    def __call__(self, source: int, targets: np.ndarray) -> np.ndarray:
        return self._row(int(source))[np.asarray(targets)]

    def cache_info(self):
        return self._row.cache_info()


@dataclass(frozen=True, eq=False)
class EvalSurface:
    """Atlas plus geodesics of the mesh the correspondences refer to."""
    atlas: UvAtlas
    geodesics: GeodesicCache

    @classmethod
    def from_model(cls, model, atlas: UvAtlas, cache_size: int = 4096) -> "EvalSurface":
        return cls(atlas=atlas, geodesics=GeodesicCache(model.template_vertices, model.faces, cache_size))


# Per-instance scores

def gps_instance(gt_points: PointSet, predicted_iuv_lookup: IuvLookup, atlas: UvAtlas,
                 mesh_geodesics: Callable[[int, np.ndarray], np.ndarray], kappa: float) -> float:
    """
    Geodesic point similarity of one prediction against one GT instance.

    Mean over GT points of exp(-g^2 / (2 kappa^2)), g the geodesic distance
    between the GT and predicted vertices. Points predicted as background
    contribute 0.
    """
    if len(gt_points) == 0:
        raise ParameterError("GPS needs at least one ground-truth point")
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    gt_vertices = iuv_to_vertices(atlas, gt_points.charts, gt_points.u, gt_points.v)
    charts, u, v = predicted_iuv_lookup(gt_points.rows, gt_points.cols)
    scores = np.zeros(len(gt_points))
    matched = np.flatnonzero(np.asarray(charts) > 0)
    if matched.size:
        pred_vertices = iuv_to_vertices(atlas, np.asarray(charts)[matched], np.asarray(u)[matched],
                                        np.asarray(v)[matched])
        distances = np.array([mesh_geodesics(int(g), np.array([p]))[0]
                              for g, p in zip(gt_vertices[matched], pred_vertices)])
        scores[matched] = np.exp(-(distances ** 2) / (2.0 * kappa ** 2))
    return float(scores.mean())


def mask_iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Intersection over union; two empty masks count as identical (1.0)."""
    a, b = np.asarray(mask_a, dtype=bool), np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        logger.debug("both masks empty, IoU defined as 1")
        return 1.0
    return np.count_nonzero(a & b) / union


def gpsm_instance(gps: float, gt_mask: np.ndarray, pred_mask: np.ndarray) -> Optional[float]:
    """sqrt(GPS * IoU); None when both masks are empty (the pair is excluded)."""
    if not (np.any(gt_mask) or np.any(pred_mask)):
        return None
    return math.sqrt(gps * mask_iou(gt_mask, pred_mask))


def bbox_iou(box_a, box_b) -> float:
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


# Matching

@dataclass
class ImageMatches:
    """Similarity matrices (detections x GT) for one image, detections sorted by score."""
    image_id: int
    scores: np.ndarray
    similarity: dict[str, np.ndarray]
    gt_ignore: dict[str, np.ndarray]
    excluded_gpsm: int = 0


def _image_similarities(image_id: int, gts: list[DenseAnnotation], dets: list[DenseAnnotation],
                        surface: EvalSurface, config: MetricsConfig) -> ImageMatches:
    n_det, n_gt = len(dets), len(gts)
    sim = {task: np.zeros((n_det, n_gt)) for task in TASKS}
    no_points = np.array([g.num_points == 0 for g in gts], dtype=bool)
    ignore = {"bbox": np.zeros(n_gt, bool), "segm": np.zeros(n_gt, bool), "gps": no_points, "gpsm": no_points}
    gt_masks = [rle_decode(g.segmentation) for g in gts]
    gt_points = [PointSet.from_annotation(g) for g in gts]
    excluded = 0

    for d, det in enumerate(dets):
        det_mask = rle_decode(det.segmentation)
        lookup = PredictionLookup(det)
        for g, gt in enumerate(gts):
            sim["bbox"][d, g] = bbox_iou(gt.bbox, det.bbox)
            segm = mask_iou(gt_masks[g], det_mask)
            sim["segm"][d, g] = segm
            if no_points[g]:
                # ignored GT still absorbs detections that overlap it
                sim["gps"][d, g] = sim["gpsm"][d, g] = segm
                continue
            gps = gps_instance(gt_points[g], lookup, surface.atlas, surface.geodesics, config.kappa)
            sim["gps"][d, g] = gps
            gpsm = gpsm_instance(gps, gt_masks[g], det_mask)
            if gpsm is None:
                excluded += 1
                gpsm = 0.0
            sim["gpsm"][d, g] = gpsm

    scores = np.array([_score(det) for det in dets])
    return ImageMatches(image_id=image_id, scores=scores, similarity=sim, gt_ignore=ignore, excluded_gpsm=excluded)


def _score(det: DenseAnnotation) -> float:
    return 1.0 if det.score is None else float(det.score)


def greedy_match(similarity: np.ndarray, threshold: float,
                 gt_ignore: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Match detections (rows, best score first) to GT columns.

    Each detection takes the unmatched non-ignored GT of highest similarity
    at or above threshold (lowest index on ties). A detection that only
    reaches an ignored GT is itself ignored. Returns (true_positive, ignored)
    per detection.
    """
    n_det, n_gt = similarity.shape
    ignore = np.zeros(n_gt, bool) if gt_ignore is None else np.asarray(gt_ignore, bool)
    taken = np.zeros(n_gt, bool)
    tp, det_ignored = np.zeros(n_det, bool), np.zeros(n_det, bool)
    for d in range(n_det):
        best, best_sim = -1, threshold
        for g in range(n_gt):
            if taken[g] or ignore[g]:
                continue
            if similarity[d, g] >= best_sim and (best < 0 or similarity[d, g] > best_sim):
                best, best_sim = g, similarity[d, g]
        if best >= 0:
            taken[best] = True
            tp[d] = True
            continue
        if any(ignore[g] and similarity[d, g] >= threshold for g in range(n_gt)):
            det_ignored[d] = True
    return tp, det_ignored


def interpolated_ap(tp: np.ndarray, scores: np.ndarray, num_gt: int) -> tuple[float, float]:
    """(AP, max recall) from per-detection TP flags; 101-point interpolation."""
    if num_gt == 0:
        return 0.0, 0.0
    order = np.argsort(-scores, kind="mergesort")
    hits = tp[order].astype(np.float64)
    tp_cum = np.cumsum(hits)
    fp_cum = np.cumsum(1.0 - hits)
    if hits.size == 0:
        return 0.0, 0.0
    recall = tp_cum / num_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).eps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    index = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(index < len(envelope), envelope[np.minimum(index, len(envelope) - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


def _task_scores(matches: Sequence[ImageMatches], task: str, thresholds: Sequence[float]) -> TaskScores:
    per_threshold = {}
    for threshold in sorted(set(thresholds) | {0.5, 0.75}):
        tps, scores, num_gt = [], [], 0
        for image in matches:
            ignore = image.gt_ignore[task]
            num_gt += int((~ignore).sum())
            tp, det_ignored = greedy_match(image.similarity[task], threshold, ignore)
            keep = ~det_ignored
            tps.append(tp[keep])
            scores.append(image.scores[keep])
        per_threshold[threshold] = interpolated_ap(
            np.concatenate(tps) if tps else np.zeros(0, bool),
            np.concatenate(scores) if scores else np.zeros(0),
            num_gt,
        )

    def at(value: float) -> tuple[float, float]:
        return next(result for t, result in per_threshold.items() if math.isclose(t, value))

    ap = float(np.mean([per_threshold[t][0] for t in per_threshold if any(math.isclose(t, s) for s in thresholds)]))
    ar = float(np.mean([per_threshold[t][1] for t in per_threshold if any(math.isclose(t, s) for s in thresholds)]))
    return TaskScores(
        ap=_percent(ap), ap50=_percent(at(0.5)[0]), ap75=_percent(at(0.75)[0]),
        ar=_percent(ar), ar50=_percent(at(0.5)[1]), ar75=_percent(at(0.75)[1]),
    )


def _percent(value: float) -> float:
    return min(max(100.0 * value, 0.0), 100.0)


def evaluate(gt_dataset: CocoDataset, predictions: Union[CocoDataset, Sequence[DenseAnnotation]],
             config: MetricsConfig, surface: EvalSurface, workers: int = 1) -> EvalReport:
    """
    Score predictions against ground truth on the bbox, GPS, GPSm and Segm tasks.

    Detections without a score count as score 1.0. Per-image similarity
    work may run on a thread pool; results are merged by image id.
    """
    gt_images = {image.id for image in gt_dataset.images}
    if isinstance(predictions, CocoDataset):
        unknown_images = sorted({image.id for image in predictions.images} - gt_images)
        if unknown_images:
            raise IdMismatchError(f"prediction images {unknown_images[:5]} are not in the ground truth")
        detections = list(predictions.annotations)
    else:
        detections = list(predictions)
    unknown = sorted({det.image_id for det in detections} - gt_images)
    if unknown:
        raise IdMismatchError(f"detections reference image ids {unknown[:5]} missing from the ground truth")
    orphan_gt = sorted({ann.image_id for ann in gt_dataset.annotations} - gt_images)
    if orphan_gt:
        raise IdMismatchError(f"ground-truth annotations reference unknown image ids {orphan_gt[:5]}")

    gts_by_image: dict[int, list[DenseAnnotation]] = {i: [] for i in gt_images}
    for ann in gt_dataset.annotations:
        gts_by_image[ann.image_id].append(ann)
    dets_by_image: dict[int, list[DenseAnnotation]] = {i: [] for i in gt_images}
    for det in detections:
        if _score(det) >= config.min_score:
            dets_by_image[det.image_id].append(det)
    for image_id, dets in dets_by_image.items():
        order = np.argsort([-_score(d) for d in dets], kind="mergesort")
        dets_by_image[image_id] = [dets[k] for k in order[:config.max_detections]]

    def work(image_id: int) -> ImageMatches:
        return _image_similarities(image_id, gts_by_image[image_id], dets_by_image[image_id], surface, config)

    image_ids = sorted(gt_images)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            matches = list(pool.map(work, image_ids))
    else:
        matches = [work(i) for i in image_ids]

    excluded = sum(m.excluded_gpsm for m in matches)
    if excluded:
        logger.info("GPSm pairs excluded (both masks empty)", extra={"pairs": excluded})
    report = EvalReport(
        tasks={task: _task_scores(matches, task, config.iou_thresholds) for task in TASKS},
        num_images=len(image_ids),
        num_gt=len(gt_dataset.annotations),
        num_detections=sum(len(d) for d in dets_by_image.values()),
        excluded_gpsm_pairs=excluded,
    )
    logger.info("evaluation finished", extra={"gps_ap": report.tasks["gps"].ap, "images": report.num_images})
    return report


def read_predictions(path) -> Union[CocoDataset, list[DenseAnnotation]]:
    """Detections from a COCO dataset file, or a bare list of result records."""
    file_path = Path(path)
    if not file_path.is_file():
        raise ResourceError(f"missing file: {file_path}")
    try:
        doc = json.loads(file_path.read_text())
    except json.JSONDecodeError as exc:
        raise CocoFormatError(f"invalid JSON: {exc.msg} (line {exc.lineno})", key_path="<root>") from exc
    try:
        if isinstance(doc, list):
            return _RESULT_LIST.validate_python(doc)
        return CocoDataset.model_validate(doc)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise CocoFormatError(first["msg"], key_path=".".join(str(p) for p in first["loc"]) or "<root>") from exc


_RESULT_LIST = TypeAdapter(list[DenseAnnotation])
