"""KITTI object-devkit ingestion: point clouds, calibration, labels, ground planes.

Coordinate frames (KITTI convention):

    velodyne / LIDAR:  x forward, y left, z up       (points in .bin files)
    camera (rect):     x right, y down, z forward    (labels, planes)
    image:             u right, v down, pixels

    u ~ P2 . R0 . Tr_velo_to_cam . x_velo   (homogeneous chain)

All bird's-eye-view operations downstream work on LIDAR-frame (x, y) with the
default crop x in [0, 70] and y in [-40, 40] meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, MalformedInputError, ParameterError

#: Default crop used throughout: ((x_min, x_max), (y_min, y_max)) in LIDAR meters.
DEFAULT_BEV_EXTENTS = ((0.0, 70.0), (-40.0, 40.0))

#: Height of the LIDAR sensor above a flat road, meters.
DEFAULT_SENSOR_HEIGHT = 1.73

_ORTHO_TOL = 1e-4


@dataclass(eq=False)
class PointCloud:
    """A LIDAR sweep: (N, 4) float32 array of (x, y, z, reflectance)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ParameterError(f"point array must be (N, 4), got {pts.shape}")
        if not np.isfinite(pts[:, :3]).all():
            raise ParameterError("point coordinates must be finite")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        """(N, 3) float64 view of the coordinates."""
        return self.points[:, :3].astype(np.float64)

    def to_bytes(self) -> bytes:
        """Serialize back to the raw little-endian float32 quadruplet layout."""
        return self.points.astype("<f4", copy=False).tobytes()


@dataclass(eq=False)
class CalibrationSet:
    """Projection (P2), rectification (R0) and velo-to-camera (Tr) matrices."""

    p2: np.ndarray  # (3, 4)
    r0: np.ndarray  # (3, 3)
    tr_velo_to_cam: np.ndarray  # (3, 4)

    def __post_init__(self):
        self.p2 = _as_matrix(self.p2, (3, 4), "p2")
        self.r0 = _as_matrix(self.r0, (3, 3), "r0")
        self.tr_velo_to_cam = _as_matrix(self.tr_velo_to_cam, (3, 4), "tr_velo_to_cam")
        if not _is_orthonormal(self.r0):
            raise ParameterError("r0 is not orthonormal")
        if not _is_orthonormal(self.tr_velo_to_cam[:, :3]):
            raise ParameterError("tr_velo_to_cam rotation block is not orthonormal")


@dataclass
class LabeledObject:
    """One line of a KITTI object label file (camera-frame ground truth).

    ``dims`` is (h, w, l) and ``location`` the bottom-face center, both in
    camera coordinates, exactly as stored in the files.  A trailing 16th
    field, present in detection result files, is kept in ``score``.
    """

    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple[float, float, float, float]  # left, top, right, bottom px
    dims: tuple[float, float, float]  # h, w, l meters
    location: tuple[float, float, float]  # x, y, z meters, camera frame
    rotation_y: float
    score: float | None = None

    def __post_init__(self):
        left, top, right, bottom = self.bbox2d
        if not (right > left and bottom > top):
            raise ParameterError(f"invalid 2D box {self.bbox2d}")
        if not self.is_dontcare and min(self.dims) <= 0:
            raise ParameterError(f"non-positive dimensions {self.dims} for {self.class_name}")

    @property
    def is_dontcare(self) -> bool:
        return self.class_name.lower() == "dontcare"

    @property
    def bbox_height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]


@dataclass
class GroundPlane:
    """Plane a*x + b*y + c*z + d = 0 with unit normal (a, b, c).

    KITTI plane files express this in the rectified camera frame; anchor
    generation expects it in the LIDAR frame (see :func:`transform_plane`).
    """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n = float(np.sqrt(self.a * self.a + self.b * self.b + self.c * self.c))
        if abs(n - 1.0) > 1e-6:
            raise ParameterError(f"plane normal norm {n} is not unit")

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=np.float64)

    def height_at(self, x: float, y: float) -> float:
        """z of the plane at (x, y); requires a non-vertical plane (|c| > 1e-6)."""
        if abs(self.c) <= 1e-6:
            raise DegenerateGeometryError("plane is vertical, z(x, y) undefined")
        return -(self.a * x + self.b * y + self.d) / self.c

    def signed_distance(self, point) -> float:
        p = np.asarray(point, dtype=np.float64)
        return float(self.a * p[0] + self.b * p[1] + self.c * p[2] + self.d)


def default_ground_plane(sensor_height: float = DEFAULT_SENSOR_HEIGHT) -> GroundPlane:
    """Camera-frame flat road `sensor_height` below the sensor (y points down)."""
    return GroundPlane(0.0, -1.0, 0.0, float(sensor_height))


def flat_lidar_plane(sensor_height: float = DEFAULT_SENSOR_HEIGHT) -> GroundPlane:
    """LIDAR-frame flat road at z = -sensor_height."""
    return GroundPlane(0.0, 0.0, 1.0, float(sensor_height))


def load_point_cloud(data: bytes) -> PointCloud:
    """Decode a KITTI velodyne buffer: consecutive little-endian float32 (x, y, z, r).

    Raises:
        MalformedInputError: length not divisible by 16 or non-finite coordinates.
    """
    if len(data) % 16 != 0:
        raise MalformedInputError(f"byte length {len(data)} not divisible by 16")
    pts = np.frombuffer(bytes(data), dtype="<f4").reshape(-1, 4)
    try:
        return PointCloud(pts.copy())
    except ParameterError as exc:
        raise MalformedInputError(str(exc)) from exc


def read_point_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        return load_point_cloud(fh.read())


def load_calibration(text: str) -> CalibrationSet:
    """Parse a KITTI calib file; needs keys P2, R0_rect, Tr_velo_to_cam."""
    values: dict[str, list[float]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, rest = line.split(":", 1)
        try:
            values[key.strip()] = [float(tok) for tok in rest.split()]
        except ValueError:
            continue
    shapes = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}
    mats = {}
    for key, shape in shapes.items():
        if key not in values:
            raise MalformedInputError(f"calibration key {key} missing")
        vals = values[key]
        if len(vals) != shape[0] * shape[1]:
            raise MalformedInputError(
                f"calibration key {key} has {len(vals)} values, expected {shape[0] * shape[1]}"
            )
        mats[key] = np.array(vals, dtype=np.float64).reshape(shape)
    try:
        return CalibrationSet(mats["P2"], mats["R0_rect"], mats["Tr_velo_to_cam"])
    except ParameterError as exc:
        raise MalformedInputError(str(exc)) from exc


def read_calibration(path) -> CalibrationSet:
    with open(path, "r") as fh:
        return load_calibration(fh.read())


def load_labels(text: str) -> list[LabeledObject]:
    """Parse KITTI label lines (15 fields, optional 16th score field)."""
    objects = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 15:
            raise MalformedInputError(f"line {lineno}: {len(fields)} fields, expected >= 15")
        try:
            obj = LabeledObject(
                class_name=fields[0],
                truncation=float(fields[1]),
                occlusion=int(float(fields[2])),
                alpha=float(fields[3]),
                bbox2d=tuple(float(v) for v in fields[4:8]),
                dims=tuple(float(v) for v in fields[8:11]),
                location=tuple(float(v) for v in fields[11:14]),
                rotation_y=float(fields[14]),
                score=float(fields[15]) if len(fields) > 15 else None,
            )
        except (ValueError, ParameterError) as exc:
            raise MalformedInputError(f"line {lineno}: {exc}") from exc
        objects.append(obj)
    return objects


def read_labels(path) -> list[LabeledObject]:
    with open(path, "r") as fh:
        return load_labels(fh.read())


def load_plane(text: str) -> GroundPlane:
    """Parse a KITTI planes file (header lines then 4 coefficients); normalizes."""
    coeffs = None
    for line in text.splitlines():
        toks = line.split()
        if len(toks) == 4:
            try:
                coeffs = [float(t) for t in toks]
            except ValueError:
                continue
    if coeffs is None:
        raise MalformedInputError("no 4-coefficient plane line found")
    n = float(np.linalg.norm(coeffs[:3]))
    if n <= 0:
        raise MalformedInputError("plane normal has zero norm")
    a, b, c, d = (v / n for v in coeffs)
    return GroundPlane(a, b, c, d)


def read_plane(path) -> GroundPlane:
    with open(path, "r") as fh:
        return load_plane(fh.read())


def lidar_to_rect_matrix(calib: CalibrationSet) -> np.ndarray:
    """4x4 matrix taking homogeneous LIDAR points into the rectified camera frame."""
    tr = np.eye(4)
    tr[:3, :4] = calib.tr_velo_to_cam
    r0 = np.eye(4)
    r0[:3, :3] = calib.r0
    return r0 @ tr


def transform_plane(plane: GroundPlane, matrix: np.ndarray) -> GroundPlane:
    """Re-express `plane` for points in the source frame of `matrix`.

    If x_dst = matrix . x_src, a plane given in the destination frame becomes
    coeffs_src = coeffs_dst . matrix (row-vector product), renormalized.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (4, 4):
        raise ParameterError(f"expected 4x4 matrix, got {m.shape}")
    coeffs = plane.coefficients @ m
    n = float(np.linalg.norm(coeffs[:3]))
    if n <= 1e-12:
        raise DegenerateGeometryError("transformed plane normal vanished")
    a, b, c, d = coeffs / n
    return GroundPlane(a, b, c, d)


def project_points(points_xyz: np.ndarray, calib: CalibrationSet):
    """Project (N, 3) LIDAR points into the image.

    Returns:
        uv: (N, 2) pixel coordinates after the perspective divide.
        valid: (N,) bool, False where the rectified-camera depth is <= 0
            (the uv values there are meaningless but kept in place).
    """
    pts = np.asarray(points_xyz, dtype=np.float64).reshape(-1, 3)
    hom = np.hstack([pts, np.ones((pts.shape[0], 1))])
    cam = hom @ lidar_to_rect_matrix(calib).T  # (N, 4) rectified camera frame
    img = cam @ calib.p2.T  # (N, 3)
    depth = img[:, 2]
    valid = depth > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = img[:, :2] / depth[:, None]
    return uv, valid


def project_to_image(cloud: PointCloud, calib: CalibrationSet):
    """Project every cloud point; see :func:`project_points`."""
    return project_points(cloud.xyz, calib)


def filter_fov(
    cloud: PointCloud,
    calib: CalibrationSet,
    image_size: tuple[int, int],
    bev_extents=DEFAULT_BEV_EXTENTS,
) -> PointCloud:
    """Keep points visible in the image and inside the BEV crop.

    A point survives when its projection is valid and lands in [0, w) x [0, h)
    and its LIDAR (x, y) lies in the half-open extents [min, max).
    """
    (x_min, x_max), (y_min, y_max) = bev_extents
    if not (x_max > x_min and y_max > y_min):
        raise ParameterError(f"ill-ordered extents {bev_extents}")
    if len(cloud) == 0:
        return PointCloud(cloud.points.copy())
    w, h = image_size
    uv, valid = project_to_image(cloud, calib)
    with np.errstate(invalid="ignore"):
        in_image = valid & (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    x = cloud.points[:, 0].astype(np.float64)
    y = cloud.points[:, 1].astype(np.float64)
    in_bev = (x >= x_min) & (x < x_max) & (y >= y_min) & (y < y_max)
    return PointCloud(cloud.points[in_image & in_bev].copy())


def _as_matrix(value, shape, name) -> np.ndarray:
    m = np.asarray(value, dtype=np.float64)
    if m.shape != shape:
        raise ParameterError(f"{name} must have shape {shape}, got {m.shape}")
    return m


def _is_orthonormal(r: np.ndarray, tol: float = _ORTHO_TOL) -> bool:
    return bool(np.allclose(r @ r.T, np.eye(3), atol=tol))
