"""KITTI-style detection evaluation: difficulty strata, greedy matching,
precision/recall, interpolated AP, heading-aware AP (each true positive
weighted by (1 + cos d_theta) / 2), and proposal-recall curves.

Camera-frame labels are converted into a z-up evaluation frame
(x = cam z, y = -cam x, z = -cam y, yaw = -rotation_y - pi/2); IoU values and
yaw differences are invariant under that rigid change as long as detections
and ground truth are converted identically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .box_codec import OrientedBox3D, camera_rotation_to_yaw, wrap_angle
from .errors import MalformedInputError, ParameterError
from .geom import iou_3d
from .kitti_io import LabeledObject, load_labels

EVAL_IOU_CAR = 0.7
EVAL_IOU_SMALL = 0.5  # pedestrian / cyclist
RECALL_IOU = 0.5


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    EXCLUDED = 3


@dataclass(frozen=True)
class DifficultyTable:
    """Per-stratum thresholds: minimum 2D box height (px), maximum occlusion
    level, maximum truncation, indexed easy/moderate/hard."""

    min_height: tuple[float, float, float] = (40.0, 25.0, 25.0)
    max_occlusion: tuple[int, int, int] = (0, 1, 2)
    max_truncation: tuple[float, float, float] = (0.15, 0.30, 0.50)


DEFAULT_DIFFICULTY_TABLE = DifficultyTable()


def difficulty_of(obj: LabeledObject, table: DifficultyTable = DEFAULT_DIFFICULTY_TABLE) -> Difficulty:
    """Easiest stratum whose constraints the object satisfies, else EXCLUDED."""
    height = obj.bbox_height
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        i = int(level)
        if (
            height >= table.min_height[i]
            and obj.occlusion <= table.max_occlusion[i]
            and obj.truncation <= table.max_truncation[i]
        ):
            return level
    return Difficulty.EXCLUDED


def label_to_box(obj: LabeledObject) -> OrientedBox3D:
    """Evaluation-frame box for a (non-DontCare) camera-frame label."""
    if obj.is_dontcare:
        raise ParameterError("DontCare labels have no 3D box")
    h, w, length = obj.dims
    x, y, z = obj.location  # camera frame, y at the bottom face
    return OrientedBox3D(
        centroid=(z, -x, -y + h / 2.0),
        dims=(length, w, h),
        yaw=camera_rotation_to_yaw(obj.rotation_y),
    )


@dataclass
class Detection:
    """A scored output box; `orientation` is the global yaw used by the
    heading-similarity metric (usually the box yaw)."""

    class_name: str
    box: OrientedBox3D
    score: float
    orientation: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ParameterError(f"score must be finite, got {self.score}")
        self.orientation = wrap_angle(self.orientation)


def load_detections(text: str) -> list[Detection]:
    """Parse KITTI label lines with the mandatory 16th score field."""
    detections = []
    for obj in load_labels(text):
        if obj.score is None:
            raise MalformedInputError(f"detection line for {obj.class_name} lacks a score")
        box = label_to_box(obj)
        detections.append(Detection(obj.class_name, box, obj.score, box.yaw))
    return detections


def read_detections(path) -> list[Detection]:
    with open(path, "r") as fh:
        return load_detections(fh.read())


@dataclass
class MatchResult:
    """Per-frame matching outcome for one class.

    det_status holds 1 (true positive), 0 (false positive) or -1 (ignored)
    per detection; heading_similarity holds (1 + cos d_theta) / 2 for true
    positives and 0 elsewhere; n_gt counts the matchable ground truths.
    """

    det_scores: np.ndarray
    det_status: np.ndarray
    det_gt_index: np.ndarray
    heading_similarity: np.ndarray
    n_gt: int
    gt_matched: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    TP, FP, IGNORED = 1, 0, -1


def match_detections(
    dets,
    gts,
    iou_fn=iou_3d,
    threshold: float = EVAL_IOU_CAR,
    ignore=None,
) -> MatchResult:
    """Greedily match one frame's detections of a single class to ground truth.

    Detections are visited in descending score; each takes the unmatched,
    non-ignored ground truth of highest IoU >= threshold.  A leftover
    detection whose IoU with an ignore-flagged ground truth (DontCare or the
    caller-provided `ignore` mask, e.g. harder difficulties) reaches the
    threshold is dropped from scoring; everything else is a false positive.
    """
    dets = list(dets)
    gts = list(gts)
    if ignore is None:
        ignore = [False] * len(gts)
    if len(ignore) != len(gts):
        raise ParameterError(f"{len(ignore)} ignore flags vs {len(gts)} ground truths")

    gt_boxes: list[OrientedBox3D | None] = []
    gt_ignore = []
    for obj, ign in zip(gts, ignore):
        if obj.is_dontcare:
            gt_boxes.append(None)  # never matchable in 3D, inert ignore region
            gt_ignore.append(True)
        else:
            gt_boxes.append(label_to_box(obj))
            gt_ignore.append(bool(ign))

    n_gt = sum(1 for ign in gt_ignore if not ign)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    status = np.zeros(len(dets), dtype=np.int64)
    gt_index = np.full(len(dets), -1, dtype=np.int64)
    similarity = np.zeros(len(dets), dtype=np.float64)
    matched = np.zeros(len(gts), dtype=bool)

    for i in order:
        det = dets[i]
        ious = [
            iou_fn(det.box, b) if b is not None else 0.0
            for b in gt_boxes
        ]
        best, best_iou = -1, 0.0
        for g, iou in enumerate(ious):
            if matched[g] or gt_ignore[g]:
                continue
            if iou >= threshold and iou > best_iou:
                best, best_iou = g, iou
        if best >= 0:
            matched[best] = True
            status[i] = MatchResult.TP
            gt_index[i] = best
            d_theta = wrap_angle(det.orientation - gt_boxes[best].yaw)
            similarity[i] = (1.0 + math.cos(d_theta)) / 2.0
            continue
        hits_ignore = any(
            gt_ignore[g] and gt_boxes[g] is not None and ious[g] >= threshold
            for g in range(len(gts))
        )
        status[i] = MatchResult.IGNORED if hits_ignore else MatchResult.FP

    return MatchResult(
        det_scores=np.array([d.score for d in dets], dtype=np.float64),
        det_status=status,
        det_gt_index=gt_index,
        heading_similarity=similarity,
        n_gt=n_gt,
        gt_matched=matched,
    )


@dataclass
class PrCurve:
    """Score-swept cumulative curve; one point per scored detection.

    heading_precision replaces the true-positive count with the summed
    heading similarities, keeping the same denominator.
    """

    recall: np.ndarray
    precision: np.ndarray
    heading_precision: np.ndarray
    n_gt: int


def pr_curve(matchings) -> PrCurve:
    """Pool per-frame matchings and sweep a score threshold over detections."""
    scores, status, sims = [], [], []
    n_gt = 0
    for m in matchings:
        n_gt += m.n_gt
        scores.append(m.det_scores)
        status.append(m.det_status)
        sims.append(m.heading_similarity)
    if scores:
        scores = np.concatenate(scores)
        status = np.concatenate(status)
        sims = np.concatenate(sims)
    else:
        scores = np.zeros(0)
        status = np.zeros(0, dtype=np.int64)
        sims = np.zeros(0)

    keep = status != MatchResult.IGNORED
    scores, status, sims = scores[keep], status[keep], sims[keep]
    order = np.argsort(-scores, kind="stable")
    status = status[order]
    sims = sims[order]

    tp = np.cumsum(status == MatchResult.TP)
    fp = np.cumsum(status == MatchResult.FP)
    sim_sum = np.cumsum(sims)
    denom = np.maximum(tp + fp, 1)
    precision = tp / denom
    heading_precision = sim_sum / denom
    recall = tp / n_gt if n_gt > 0 else np.zeros_like(precision)
    return PrCurve(recall, precision, heading_precision, n_gt)


def _interpolated_mean(recall, values, mode) -> float:
    if mode == "11-point":
        points = np.linspace(0.0, 1.0, 11)
    elif mode == "40-point":
        points = np.arange(1, 41, dtype=np.float64) / 40.0
    else:
        raise ParameterError(f"unknown interpolation mode {mode!r}")
    if len(recall) == 0:
        return 0.0
    total = 0.0
    for r in points:
        tail = values[recall >= r - 1e-12]
        total += float(tail.max()) if tail.size else 0.0
    return total / len(points)


def average_precision(curve: PrCurve, mode: str = "11-point") -> float:
    """Mean of max-precision-at-recall>=r over the fixed recall points."""
    return _interpolated_mean(curve.recall, curve.precision, mode)


def average_heading_similarity(curve: PrCurve, mode: str = "11-point") -> float:
    """AP-style mean where true positives are weighted by heading similarity."""
    return _interpolated_mean(curve.recall, curve.heading_precision, mode)


def recall_curve(
    proposals_per_frame,
    gts_per_frame,
    n_values,
    iou_fn=iou_3d,
    threshold: float = RECALL_IOU,
):
    """(n, recall) pairs: fraction of ground truths covered by a top-n proposal.

    `proposals_per_frame` holds per-frame lists of OrientedBox3D already
    ranked best-first; `gts_per_frame` holds per-frame OrientedBox3D lists.
    """
    if len(proposals_per_frame) != len(gts_per_frame):
        raise ParameterError("frame count mismatch between proposals and ground truth")
    n_values = sorted(int(n) for n in n_values)
    if any(n < 1 for n in n_values):
        raise ParameterError("n values must be positive")

    first_cover_ranks = []  # per gt: rank (1-based) of the first covering proposal
    n_gt = 0
    for proposals, gts in zip(proposals_per_frame, gts_per_frame):
        n_gt += len(gts)
        for gt in gts:
            rank = None
            for idx, prop in enumerate(proposals):
                if iou_fn(prop, gt) >= threshold:
                    rank = idx + 1
                    break
            if rank is not None:
                first_cover_ranks.append(rank)

    ranks = np.array(first_cover_ranks, dtype=np.int64)
    out = []
    for n in n_values:
        covered = int((ranks <= n).sum()) if ranks.size else 0
        out.append((n, covered / n_gt if n_gt > 0 else 0.0))
    return out


def evaluate_class(
    dets_by_frame,
    gts_by_frame,
    class_name: str,
    difficulty: Difficulty,
    iou_fn=iou_3d,
    threshold: float | None = None,
    table: DifficultyTable = DEFAULT_DIFFICULTY_TABLE,
    mode: str = "11-point",
):
    """AP and heading-aware AP for one class at one difficulty level.

    Ground truths of the class at harder-than-evaluated difficulty (or
    excluded) are ignore regions; other classes are dropped outright.
    Returns (ap, ahs, curve).
    """
    if threshold is None:
        threshold = EVAL_IOU_CAR if class_name.lower() == "car" else EVAL_IOU_SMALL
    if len(dets_by_frame) != len(gts_by_frame):
        raise ParameterError("frame count mismatch between detections and ground truth")
    wanted = class_name.lower()
    matchings = []
    for dets, gts in zip(dets_by_frame, gts_by_frame):
        dets = [d for d in dets if d.class_name.lower() == wanted]
        frame_gts, ignore = [], []
        for obj in gts:
            if obj.is_dontcare:
                frame_gts.append(obj)
                ignore.append(True)
            elif obj.class_name.lower() == wanted:
                frame_gts.append(obj)
                ignore.append(difficulty_of(obj, table) > difficulty)
        matchings.append(match_detections(dets, frame_gts, iou_fn, threshold, ignore))
    curve = pr_curve(matchings)
    return average_precision(curve, mode), average_heading_similarity(curve, mode), curve
