import math

import numpy as np
import pytest

from bevkit.box_codec import OrientedBox3D
from bevkit.kitti_io import CalibrationSet, PointCloud

# canonical velodyne-to-camera axis permutation used by synthetic fixtures
SYNTH_TR = np.array(
    [
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, -0.08],
        [1.0, 0.0, 0.0, -0.27],
    ]
)
SYNTH_P2 = np.array(
    [
        [700.0, 0.0, 620.0, 0.0],
        [0.0, 700.0, 180.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ]
)


@pytest.fixture
def synth_calib() -> CalibrationSet:
    return CalibrationSet(SYNTH_P2.copy(), np.eye(3), SYNTH_TR.copy())


@pytest.fixture
def identity_calib() -> CalibrationSet:
    p2 = np.hstack([np.eye(3), np.zeros((3, 1))])
    tr = np.hstack([np.eye(3), np.zeros((3, 1))])
    return CalibrationSet(p2, np.eye(3), tr)


def make_cloud(rng, n, extents=((0.0, 70.0), (-40.0, 40.0)), z_range=(-1.0, 3.0)) -> PointCloud:
    (x0, x1), (y0, y1) = extents
    pts = np.empty((n, 4), dtype=np.float32)
    pts[:, 0] = rng.uniform(x0, x1, n)
    pts[:, 1] = rng.uniform(y0, y1, n)
    pts[:, 2] = rng.uniform(*z_range, n)
    pts[:, 3] = rng.uniform(0.0, 1.0, n)
    return PointCloud(pts)


def make_box(rng, center_range=((0.0, 70.0), (-40.0, 40.0)), z_range=(-2.0, 1.0)) -> OrientedBox3D:
    (x0, x1), (y0, y1) = center_range
    return OrientedBox3D(
        centroid=(rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(*z_range)),
        dims=tuple(rng.uniform(0.5, 5.0, 3)),
        yaw=rng.uniform(-math.pi, math.pi),
    )


def make_box_near(rng, box: OrientedBox3D, shift=1.0) -> OrientedBox3D:
    cx, cy, cz = box.centroid
    return OrientedBox3D(
        centroid=(
            cx + rng.uniform(-shift, shift),
            cy + rng.uniform(-shift, shift),
            cz + rng.uniform(-shift / 2, shift / 2),
        ),
        dims=tuple(rng.uniform(0.5, 5.0, 3)),
        yaw=rng.uniform(-math.pi, math.pi),
    )
