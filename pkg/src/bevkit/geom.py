"""Overlap geometry: axis-aligned / rotated / 3D IoU, greedy NMS, bilinear crops.

Rotated overlap uses Sutherland-Hodgman clipping of one convex footprint
against the other's half-planes followed by the shoelace area; half-plane
tests use a 1e-12 epsilon and intersection areas below 1e-12 count as empty.
"""

from __future__ import annotations

import math

import numpy as np

from .box_codec import OrientedBox3D, corners_bev
from .errors import ParameterError

_EPS = 1e-12


def iou_axis_aligned(a, b) -> float:
    """IoU of two (x0, y0, x1, y1) rectangles; 0 when both are degenerate."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    if ax1 < ax0 or ay1 < ay0 or bx1 < bx0 or by1 < by0:
        raise ParameterError("rectangles must be well-ordered")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0:
        return 0.0
    return inter / union


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Clip a polygon against a convex, counter-clockwise clipper polygon."""
    output = [tuple(p) for p in np.asarray(subject, dtype=np.float64)]
    clipper = np.asarray(clipper, dtype=np.float64)
    n = len(clipper)
    for k in range(n):
        if not output:
            break
        cp1 = clipper[k]
        cp2 = clipper[(k + 1) % n]
        ex, ey = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def inside(p):
            return ex * (p[1] - cp1[1]) - ey * (p[0] - cp1[0]) >= -_EPS

        def intersect(s, t):
            dx, dy = t[0] - s[0], t[1] - s[1]
            denom = ex * dy - ey * dx
            if abs(denom) < _EPS:
                return t
            u = (ex * (s[1] - cp1[1]) - ey * (s[0] - cp1[0])) / -denom
            return (s[0] + u * dx, s[1] + u * dy)

        polygon, output = output, []
        s = polygon[-1]
        for t in polygon:
            if inside(t):
                if not inside(s):
                    output.append(intersect(s, t))
                output.append(t)
            elif inside(s):
                output.append(intersect(s, t))
            s = t
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area (absolute value)."""
    p = np.asarray(poly, dtype=np.float64)
    if p.shape[0] < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def intersection_area_bev(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Footprint intersection area of two oriented boxes."""
    # cheap reject: centers farther apart than the circumradii sum
    dx = a.centroid[0] - b.centroid[0]
    dy = a.centroid[1] - b.centroid[1]
    ra = math.hypot(a.dims[0], a.dims[1]) / 2.0
    rb = math.hypot(b.dims[0], b.dims[1]) / 2.0
    if math.hypot(dx, dy) > ra + rb:
        return 0.0
    area = polygon_area(clip_polygon(corners_bev(a), corners_bev(b)))
    return area if area > _EPS else 0.0


def iou_rotated_bev(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """IoU of the two rotated BEV footprints."""
    inter = intersection_area_bev(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.bev_area + b.bev_area - inter
    return inter / union if union > _EPS else 0.0


def iou_3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Volume IoU for yaw-only boxes: BEV intersection times vertical overlap."""
    overlap = min(a.z_top, b.z_top) - max(a.z_bottom, b.z_bottom)
    if overlap <= 0.0:
        return 0.0
    inter = intersection_area_bev(a, b) * overlap
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return inter / union if union > _EPS else 0.0


def nms(boxes, scores, iou_fn, threshold: float, max_keep: int | None = None) -> list[int]:
    """Greedy non-maximum suppression.

    Boxes are visited in descending score (ties: lower index first); a box is
    suppressed when its IoU with an already-kept box is strictly above
    `threshold`.  Returns kept indices in selection order.
    """
    boxes = list(boxes)
    scores = list(scores)
    if len(boxes) != len(scores):
        raise ParameterError(f"{len(boxes)} boxes vs {len(scores)} scores")
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must be in [0, 1], got {threshold}")
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    suppressed = [False] * len(boxes)
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(i)
        if max_keep is not None and len(kept) >= max_keep:
            break
        for j in order[pos + 1 :]:
            if not suppressed[j] and iou_fn(boxes[i], boxes[j]) > threshold:
                suppressed[j] = True
    return kept


def crop_and_resize(feature_map: np.ndarray, roi, out_size) -> np.ndarray:
    """Bilinear crop of an (H, W, D) map to (h, w, D) over a normalized ROI.

    Sampling uses align-corners semantics: the first and last sample rows and
    columns land exactly on the ROI edges (a size-1 axis samples the ROI
    midpoint).  Samples outside the map read as zero.

    `roi` is anything with x0/y0/x1/y1 in [0, 1] (x along width) or a 4-tuple.
    """
    fmap = np.asarray(feature_map, dtype=np.float64)
    if fmap.ndim != 3:
        raise ParameterError(f"feature map must be (H, W, D), got shape {fmap.shape}")
    if hasattr(roi, "x0"):
        x0, y0, x1, y1 = roi.x0, roi.y0, roi.x1, roi.y1
    else:
        x0, y0, x1, y1 = roi
    if not (x1 > x0 and y1 > y0):
        raise ParameterError(f"degenerate roi ({x0}, {y0}, {x1}, {y1})")
    out_h, out_w = int(out_size[0]), int(out_size[1])
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output size must be positive, got {out_size}")

    height, width, depth = fmap.shape
    ys = _sample_coords(y0 * (height - 1), y1 * (height - 1), out_h)
    xs = _sample_coords(x0 * (width - 1), x1 * (width - 1), out_w)

    y0i = np.floor(ys).astype(np.int64)
    x0i = np.floor(xs).astype(np.int64)
    wy = ys - y0i
    wx = xs - x0i

    out = np.zeros((out_h, out_w, depth), dtype=np.float64)
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yi = y0i + dy
        xi = x0i + dx
        valid_y = (yi >= 0) & (yi < height)
        valid_x = (xi >= 0) & (xi < width)
        weight = np.outer(
            np.where(dy == 1, wy, 1.0 - wy) * valid_y,
            np.where(dx == 1, wx, 1.0 - wx) * valid_x,
        )
        gathered = fmap[np.clip(yi, 0, height - 1)[:, None], np.clip(xi, 0, width - 1)[None, :]]
        out += weight[:, :, None] * gathered
    return out


def fuse_mean(crops) -> np.ndarray:
    """Element-wise mean of equally-shaped feature crops."""
    crops = [np.asarray(c, dtype=np.float64) for c in crops]
    if not crops:
        raise ParameterError("need at least one crop")
    shape = crops[0].shape
    for c in crops[1:]:
        if c.shape != shape:
            raise ParameterError(f"crop shape {c.shape} != {shape}")
    return np.mean(np.stack(crops, axis=0), axis=0)


def _sample_coords(lo: float, hi: float, n: int) -> np.ndarray:
    if n == 1:
        return np.array([(lo + hi) / 2.0])
    return lo + (hi - lo) * np.arange(n, dtype=np.float64) / (n - 1)
