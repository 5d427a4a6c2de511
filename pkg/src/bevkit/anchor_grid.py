"""3D anchor grid: generation, integral-image emptiness filtering, ROI
projection, and IoU-based object/background label assignment.

Anchors are axis-aligned boxes on a regular BEV grid.  Centers start at
extent_min + stride / 2 and step by the stride, excluding centers at or past
extent_max, so the default 70 x 80 m crop at a 0.5 m stride gives 140 x 160
positions; every size is emitted as (d_x, d_y) and, when the sides differ,
the swapped (d_y, d_x) variant.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from .bev import OccupancyIntegral, footprint_cell_rect
from .box_codec import OrientedBox3D, corners_bev
from .errors import MalformedInputError, ParameterError
from .geom import iou_rotated_bev
from .kitti_io import CalibrationSet, GroundPlane, project_points

BACKGROUND_IOU_THRESHOLD = 0.3
OBJECT_IOU_THRESHOLD_CAR = 0.5
OBJECT_IOU_THRESHOLD_SMALL = 0.45  # pedestrian / cyclist


@dataclass
class Anchor3D:
    """Axis-aligned prior box: centroid (t_x, t_y, t_z), dims (d_x, d_y, d_z)."""

    centroid: tuple[float, float, float]
    dims: tuple[float, float, float]

    def __post_init__(self):
        self.centroid = tuple(float(v) for v in self.centroid)
        self.dims = tuple(float(v) for v in self.dims)
        if min(self.dims) <= 0:
            raise ParameterError(f"anchor dims must be positive, got {self.dims}")

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) BEV rectangle in meters."""
        tx, ty, _ = self.centroid
        dx, dy, _ = self.dims
        return (tx - dx / 2.0, ty - dy / 2.0, tx + dx / 2.0, ty + dy / 2.0)

    def as_box(self) -> OrientedBox3D:
        return OrientedBox3D(self.centroid, self.dims, 0.0)


@dataclass
class Roi:
    """Normalized [0, 1] view rectangle; x runs along the map width."""

    view: str  # "bev" or "image"
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.view not in ("bev", "image"):
            raise ParameterError(f"unknown view {self.view!r}")
        for v in (self.x0, self.y0, self.x1, self.y1):
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"roi coordinate {v} outside [0, 1]")
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ParameterError("roi must be well-ordered")

    @property
    def is_degenerate(self) -> bool:
        return self.x1 <= self.x0 or self.y1 <= self.y0


class LabelKind(enum.Enum):
    OBJECT = "object"
    BACKGROUND = "background"
    IGNORE = "ignore"


@dataclass
class AnchorLabel:
    kind: LabelKind
    gt_index: int | None = None
    iou: float = 0.0

    def __post_init__(self):
        if self.kind is LabelKind.OBJECT and (self.gt_index is None or self.gt_index < 0):
            raise ParameterError("object labels need a ground-truth index")


def cluster_dimensions(labels, class_name: str, k: int) -> list[tuple[float, float, float]]:
    """k-means centroids of the class's (l, w, h) triples as (d_x, d_y, d_z).

    Deterministic: farthest-point seeding (first seed farthest from the data
    mean, ties to the lowest index), Lloyd iterations capped at 100 with a
    1e-8 movement tolerance, centroids sorted by volume.
    """
    wanted = class_name.lower()
    data = np.array(
        [(o.dims[2], o.dims[1], o.dims[0]) for o in labels if o.class_name.lower() == wanted],
        dtype=np.float64,
    )
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if data.shape[0] < k:
        raise ParameterError(f"{data.shape[0]} samples of {class_name!r}, need >= {k}")

    centers = _farthest_point_seeds(data, k)
    for _ in range(100):
        d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for c in range(k):
            members = data[assign == c]
            if len(members):
                new_centers[c] = members.mean(axis=0)
        move = float(np.abs(new_centers - centers).max())
        centers = new_centers
        if move < 1e-8:
            break
    order = np.lexsort((centers[:, 2], centers[:, 1], centers[:, 0], centers.prod(axis=1)))
    return [tuple(centers[i]) for i in order]


def _farthest_point_seeds(data: np.ndarray, k: int) -> np.ndarray:
    mean = data.mean(axis=0)
    first = int(np.argmax(((data - mean) ** 2).sum(axis=1)))
    seeds = [first]
    min_d2 = ((data - data[first]) ** 2).sum(axis=1)
    while len(seeds) < k:
        nxt = int(np.argmax(min_d2))
        seeds.append(nxt)
        min_d2 = np.minimum(min_d2, ((data - data[nxt]) ** 2).sum(axis=1))
    return data[seeds].copy()


def generate_anchor_grid(
    bev_extents,
    stride: float,
    sizes,
    ground_plane: GroundPlane,
) -> list[Anchor3D]:
    """Regular anchor grid with box bottoms resting on the ground plane.

    `ground_plane` must be expressed in the anchor (LIDAR, z-up) frame; each
    anchor's t_z is the plane height at (t_x, t_y) plus half its d_z.
    Emission order: x position, then y, then size, then variant.
    """
    if stride <= 0:
        raise ParameterError(f"stride must be positive, got {stride}")
    sizes = [tuple(float(v) for v in s) for s in sizes]
    if not sizes:
        raise ParameterError("need at least one anchor size")
    (x_min, x_max), (y_min, y_max) = bev_extents

    xs = _grid_centers(x_min, x_max, stride)
    ys = _grid_centers(y_min, y_max, stride)
    variants = []
    for dx, dy, dz in sizes:
        variants.append((dx, dy, dz))
        if dx != dy:
            variants.append((dy, dx, dz))

    anchors = []
    for tx in xs:
        for ty in ys:
            z0 = ground_plane.height_at(tx, ty)
            for dx, dy, dz in variants:
                anchors.append(Anchor3D((tx, ty, z0 + dz / 2.0), (dx, dy, dz)))
    return anchors


def _grid_centers(lo: float, hi: float, stride: float) -> np.ndarray:
    n_max = int(math.ceil((hi - lo) / stride)) + 1
    centers = lo + stride / 2.0 + stride * np.arange(n_max, dtype=np.float64)
    return centers[centers < hi]


def filter_empty_anchors(anchors, integral: OccupancyIntegral) -> list[Anchor3D]:
    """Drop anchors whose BEV footprint covers no occupied cell.

    Emptiness is decided at the integral image's cell granularity: the
    footprint's floor/ceil cell rectangle must contain at least one point.
    """
    if not anchors:
        return []
    foot = np.array([a.footprint for a in anchors], dtype=np.float64)
    i0, j0, i1, j1 = footprint_cell_rect(
        foot[:, 0], foot[:, 2], foot[:, 1], foot[:, 3], integral.extents, integral.resolution
    )
    t = integral.table
    counts = t[i1, j1] - t[i0, j1] - t[i1, j0] + t[i0, j0]
    return [a for a, n in zip(anchors, counts) if n > 0]


def project_anchor_to_bev(anchor: Anchor3D, bev_extents) -> Roi:
    """Normalized BEV ROI of the anchor footprint (x forward, y lateral)."""
    (x_min, x_max), (y_min, y_max) = bev_extents
    fx0, fy0, fx1, fy1 = anchor.footprint
    x0 = _clamp01((fx0 - x_min) / (x_max - x_min))
    x1 = _clamp01((fx1 - x_min) / (x_max - x_min))
    y0 = _clamp01((fy0 - y_min) / (y_max - y_min))
    y1 = _clamp01((fy1 - y_min) / (y_max - y_min))
    return Roi("bev", x0, y0, x1, y1)


def project_anchor_to_image(
    anchor: Anchor3D, calib: CalibrationSet, image_size: tuple[int, int]
) -> Roi:
    """Axis-aligned image ROI bounding the projections of the 8 box corners.

    Corners behind the camera are skipped; when all 8 are behind, a
    zero-area ROI at the origin is returned (flagged via is_degenerate).
    """
    tx, ty, tz = anchor.centroid
    dx, dy, dz = anchor.dims
    corners = np.array(
        [
            (tx + sx * dx / 2.0, ty + sy * dy / 2.0, tz + sz * dz / 2.0)
            for sx in (-1, 1)
            for sy in (-1, 1)
            for sz in (-1, 1)
        ]
    )
    uv, valid = project_points(corners, calib)
    if not valid.any():
        return Roi("image", 0.0, 0.0, 0.0, 0.0)
    uv = uv[valid]
    w, h = image_size
    return Roi(
        "image",
        _clamp01(uv[:, 0].min() / w),
        _clamp01(uv[:, 1].min() / h),
        _clamp01(uv[:, 0].max() / w),
        _clamp01(uv[:, 1].max() / h),
    )


def assign_anchor_labels(
    anchors,
    gt_boxes,
    class_name: str,
    use_rotated_iou: bool = False,
) -> list[AnchorLabel]:
    """Object / background / ignore labels from BEV IoU against ground truth.

    Background below 0.3 IoU; object at or above 0.5 (car) or 0.45
    (pedestrian, cyclist); everything between is ignored.  By default the
    IoU compares axis-aligned rectangles (the anchor footprint against the
    ground-truth footprint's bounding rectangle); `use_rotated_iou` switches
    to the rotated-polygon overlap with the anchor treated as a yaw-0 box.
    """
    obj_thresh = (
        OBJECT_IOU_THRESHOLD_CAR
        if class_name.lower() == "car"
        else OBJECT_IOU_THRESHOLD_SMALL
    )
    gt_boxes = list(gt_boxes)
    if not anchors:
        return []
    if not gt_boxes:
        return [AnchorLabel(LabelKind.BACKGROUND) for _ in anchors]

    if use_rotated_iou:
        ious = np.array(
            [[iou_rotated_bev(a.as_box(), g) for g in gt_boxes] for a in anchors]
        )
    else:
        ious = _rect_iou_matrix(
            np.array([a.footprint for a in anchors]),
            np.array([_bounding_rect(g) for g in gt_boxes]),
        )

    best = ious.argmax(axis=1)
    best_iou = ious[np.arange(len(anchors)), best]
    labels = []
    for gt_idx, iou in zip(best, best_iou):
        if iou < BACKGROUND_IOU_THRESHOLD:
            labels.append(AnchorLabel(LabelKind.BACKGROUND, iou=float(iou)))
        elif iou >= obj_thresh:
            labels.append(AnchorLabel(LabelKind.OBJECT, int(gt_idx), float(iou)))
        else:
            labels.append(AnchorLabel(LabelKind.IGNORE, iou=float(iou)))
    return labels


def compute_axis_aligned_offsets(anchor: Anchor3D, gt: Anchor3D) -> np.ndarray:
    """(dt_x, dt_y, dt_z, dd_x, dd_y, dd_z) = gt - anchor, componentwise meters."""
    return np.array(
        [g - a for g, a in zip(gt.centroid, anchor.centroid)]
        + [g - a for g, a in zip(gt.dims, anchor.dims)],
        dtype=np.float64,
    )


def apply_axis_aligned_offsets(anchor: Anchor3D, offsets) -> Anchor3D:
    """Inverse of compute_axis_aligned_offsets."""
    o = np.asarray(offsets, dtype=np.float64).reshape(-1)
    if o.shape != (6,):
        raise ParameterError(f"offsets must be a 6-vector, got shape {o.shape}")
    return Anchor3D(
        tuple(c + d for c, d in zip(anchor.centroid, o[:3])),
        tuple(c + d for c, d in zip(anchor.dims, o[3:])),
    )


def write_anchors_csv(path, anchors) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tx", "ty", "tz", "dx", "dy", "dz"])
        for a in anchors:
            writer.writerow([repr(v) for v in (*a.centroid, *a.dims)])


def read_anchors_csv(path) -> list[Anchor3D]:
    anchors = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tx", "ty", "tz", "dx", "dy", "dz"]:
            raise MalformedInputError(f"unexpected anchor CSV header {header}")
        for row in reader:
            if not row:
                continue
            vals = [float(v) for v in row]
            anchors.append(Anchor3D(tuple(vals[:3]), tuple(vals[3:])))
    return anchors


def write_clusters_csv(path, clusters: dict) -> None:
    """`clusters` maps class name to an ordered list of (d_x, d_y, d_z)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "k_index", "dx", "dy", "dz"])
        for cls in sorted(clusters):
            for idx, dims in enumerate(clusters[cls]):
                writer.writerow([cls, idx, *(repr(v) for v in dims)])


def read_clusters_csv(path) -> dict:
    clusters: dict[str, list] = {}
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["class", "k_index", "dx", "dy", "dz"]:
            raise MalformedInputError(f"unexpected cluster CSV header {header}")
        rows = []
        for row in reader:
            if not row:
                continue
            rows.append((row[0], int(row[1]), tuple(float(v) for v in row[2:5])))
    for cls, idx, dims in sorted(rows, key=lambda r: (r[0], r[1])):
        clusters.setdefault(cls, []).append(dims)
    return clusters


def _bounding_rect(box: OrientedBox3D) -> tuple[float, float, float, float]:
    c = corners_bev(box)
    return (c[:, 0].min(), c[:, 1].min(), c[:, 0].max(), c[:, 1].max())


def _rect_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (N, 4) and (G, 4) rectangles as (x0, y0, x1, y1)."""
    ix0 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy0 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix1 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy1 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix1 - ix0, 0, None) * np.clip(iy1 - iy0, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


def _clamp01(v: float) -> float:
    return float(min(1.0, max(0.0, v)))
