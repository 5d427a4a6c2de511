"""Oriented-box encodings, corner correspondence, and orientation resolution.

Three interchangeable box parameterizations are supported:

* axis-aligned centroid/dims (see :mod:`bevkit.anchor_grid`), 6 values,
* four BEV corners plus two heights above the ground plane, 10 values,
* eight full 3D corners, 24 values (kept for comparison).

BEV corners are always emitted counter-clockwise starting from the local
(+x, +y) corner, which makes "cyclic rotation" the only reordering the
closest-corner correspondence ever applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, DegenerateOrientationError, ParameterError
from .kitti_io import GroundPlane


def wrap_angle(theta: float) -> float:
    """Wrap into [-pi, pi) (pi maps to -pi)."""
    return float((theta + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass
class OrientedBox3D:
    """Yaw-rotated 3D box: centroid (x, y, z), dims (d_x, d_y, d_z), yaw about +z.

    d_x is the extent along the heading; yaw is wrapped on construction.
    """

    centroid: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        self.centroid = tuple(float(v) for v in self.centroid)
        self.dims = tuple(float(v) for v in self.dims)
        if min(self.dims) <= 0:
            raise ParameterError(f"box dims must be positive, got {self.dims}")
        self.yaw = wrap_angle(float(self.yaw))

    @property
    def z_bottom(self) -> float:
        return self.centroid[2] - self.dims[2] / 2.0

    @property
    def z_top(self) -> float:
        return self.centroid[2] + self.dims[2] / 2.0

    @property
    def bev_area(self) -> float:
        return self.dims[0] * self.dims[1]

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]


@dataclass(eq=False)
class FourCornerBox:
    """Four BEV corners (fixed cyclic order) plus top/bottom plane offsets.

    ``h1``/``h2`` are the top and bottom face offsets measured along the
    ground-plane normal, with h1 > h2.
    """

    corners: np.ndarray  # (4, 2)
    h1: float
    h2: float

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise ParameterError(f"corners must be (4, 2), got {c.shape}")
        if not np.isfinite(c).all():
            raise ParameterError("corners must be finite")
        if not self.h1 > self.h2:
            raise DegenerateGeometryError(f"h1 ={self.h1} must exceed h2 = {self.h2}")
        self.corners = c
        self.h1 = float(self.h1)
        self.h2 = float(self.h2)


def corners_bev(box: OrientedBox3D) -> np.ndarray:
    """(4, 2) BEV corners, counter-clockwise from the local (+, +) corner."""
    hx, hy = box.dims[0] / 2.0, box.dims[1] / 2.0
    local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]], dtype=np.float64)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(box.centroid[:2], dtype=np.float64)


def corners_3d(box: OrientedBox3D) -> np.ndarray:
    """(8, 3) corners: bottom ring then top ring, each in corners_bev order."""
    bev = corners_bev(box)
    out = np.zeros((8, 3), dtype=np.float64)
    out[:4, :2] = bev
    out[4:, :2] = bev
    out[:4, 2] = box.z_bottom
    out[4:, 2] = box.z_top
    return out


def plane_offsets(box: OrientedBox3D, plane: GroundPlane) -> tuple[float, float]:
    """(top, bottom) signed plane offsets of the box's face centers."""
    cx, cy, cz = box.centroid
    top = plane.signed_distance((cx, cy, box.z_top))
    bottom = plane.signed_distance((cx, cy, box.z_bottom))
    return top, bottom


def _closest_corner_roll(gt_corners: np.ndarray, anchor_xy: np.ndarray) -> int:
    d = np.linalg.norm(gt_corners - anchor_xy, axis=1)
    return int(np.argmin(d))  # argmin takes the lowest index on ties


def encode_four_corner(
    proposal: OrientedBox3D, gt: OrientedBox3D, plane: GroundPlane
) -> np.ndarray:
    """10-vector (dx1..dx4, dy1..dy4, dh1, dh2) from proposal to ground truth.

    The ground-truth corner list is cyclically rotated so its corner nearest
    (in BEV) to proposal corner 1 lines up first; winding is preserved.
    """
    pc = corners_bev(proposal)
    gc = corners_bev(gt)
    roll = _closest_corner_roll(gc, pc[0])
    gc = np.roll(gc, -roll, axis=0)
    delta = gc - pc
    p_h1, p_h2 = plane_offsets(proposal, plane)
    g_h1, g_h2 = plane_offsets(gt, plane)
    return np.concatenate([delta[:, 0], delta[:, 1], [g_h1 - p_h1, g_h2 - p_h2]])


def decode_four_corner(
    proposal: OrientedBox3D, target: np.ndarray, plane: GroundPlane
) -> FourCornerBox:
    """Apply a 10-vector of corner/height offsets to a proposal box."""
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if t.shape != (10,) or not np.isfinite(t).all():
        raise ParameterError(f"target must be a finite 10-vector, got shape {t.shape}")
    pc = corners_bev(proposal)
    corners = pc + np.stack([t[0:4], t[4:8]], axis=1)
    p_h1, p_h2 = plane_offsets(proposal, plane)
    return FourCornerBox(corners=corners, h1=p_h1 + t[8], h2=p_h2 + t[9])


def encode_eight_corner(proposal: OrientedBox3D, gt: OrientedBox3D) -> np.ndarray:
    """24-vector of per-corner (dx, dy, dz) after BEV closest-corner matching.

    Both the bottom and top rings are rolled by the same amount so vertical
    edges stay paired.
    """
    pc = corners_3d(proposal)
    gc = corners_3d(gt)
    roll = _closest_corner_roll(gc[:4, :2], pc[0, :2])
    gc = np.vstack([np.roll(gc[:4], -roll, axis=0), np.roll(gc[4:], -roll, axis=0)])
    return (gc - pc).reshape(-1)


def decode_eight_corner(proposal: OrientedBox3D, target: np.ndarray) -> np.ndarray:
    """(8, 3) corner array recovered from a 24-vector of offsets."""
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if t.shape != (24,) or not np.isfinite(t).all():
        raise ParameterError(f"target must be a finite 24-vector, got shape {t.shape}")
    return corners_3d(proposal) + t.reshape(8, 3)


def fit_oriented_box(fc: FourCornerBox):
    """Best-fit rectangle through four near-rectangular corners.

    The principal direction averages the two opposite-edge pairs, weighted by
    edge length (second pair rotated -90 degrees onto the first); dims come
    from corner projections onto that axis and its normal.  Heights are taken
    as plane-relative z, so the returned centroid z is (h1 + h2) / 2 above
    the plane the corner box was encoded against.

    Returns:
        (box, candidates): the fitted OrientedBox3D and the four candidate
        yaws (theta, theta + pi/2, theta + pi, theta - pi/2), wrapped.

    Raises:
        DegenerateGeometryError: corners collinear or a degenerate extent.
    """
    c = fc.corners
    centroid = c.mean(axis=0)
    e = np.roll(c, -1, axis=0) - c  # edge k: corner k -> corner k+1
    pair_a = e[0] - e[2]
    pair_b = e[1] - e[3]
    u = pair_a + np.array([pair_b[1], -pair_b[0]])  # rotate pair_b by -90 deg
    if np.linalg.norm(u) < 1e-9:
        raise DegenerateGeometryError("edge directions cancel, cannot orient corners")
    theta = math.atan2(-u[1], -u[0])  # corner1->corner2 runs along local -x

    axis = np.array([math.cos(theta), math.sin(theta)])
    normal = np.array([-axis[1], axis[0]])
    offsets = c - centroid
    proj_x = offsets @ axis
    proj_y = offsets @ normal
    d_x = float(proj_x.max() - proj_x.min())
    d_y = float(proj_y.max() - proj_y.min())
    d_z = fc.h1 - fc.h2
    if min(d_x, d_y, d_z) <= 1e-9:
        raise DegenerateGeometryError(f"degenerate fitted extents ({d_x}, {d_y}, {d_z})")

    box = OrientedBox3D(
        centroid=(float(centroid[0]), float(centroid[1]), (fc.h1 + fc.h2) / 2.0),
        dims=(d_x, d_y, d_z),
        yaw=theta,
    )
    candidates = tuple(
        wrap_angle(theta + k * math.pi / 2.0) for k in (0, 1, 2, -1)
    )
    return box, candidates


def orientation_to_vector(theta: float) -> np.ndarray:
    """Unit vector (cos theta, sin theta)."""
    if not math.isfinite(theta):
        raise ParameterError(f"angle must be finite, got {theta}")
    return np.array([math.cos(theta), math.sin(theta)], dtype=np.float64)


def vector_to_angle(vector) -> float:
    """Two-argument arctangent of an orientation vector (norm must exceed 1e-6)."""
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.shape != (2,):
        raise ParameterError(f"orientation vector must have 2 components, got {v.shape}")
    if float(np.hypot(v[0], v[1])) <= 1e-6:
        raise DegenerateOrientationError("orientation vector norm too small")
    return math.atan2(v[1], v[0])


def resolve_orientation(candidates, regressed) -> float:
    """Pick the candidate yaw nearest the regressed orientation vector.

    Angular distance is wrap-aware; ties go to the lowest candidate index.
    """
    target = vector_to_angle(regressed)
    best = None
    best_dist = math.inf
    for cand in candidates:
        dist = abs(wrap_angle(cand - target))
        if dist < best_dist:
            best, best_dist = cand, dist
    if best is None:
        raise ParameterError("empty candidate set")
    return float(best)


def yaw_lidar_to_camera(yaw: float) -> float:
    """LIDAR-frame yaw (z up) to KITTI rotation_y (camera y-down axis)."""
    return wrap_angle(-yaw - math.pi / 2.0)


def camera_rotation_to_yaw(rotation_y: float) -> float:
    """KITTI rotation_y back to LIDAR-frame yaw; inverse of yaw_lidar_to_camera."""
    return wrap_angle(-rotation_y - math.pi / 2.0)
