"""Six-channel bird's-eye-view encoding and the occupancy summed-area table.

Grid convention: ``grid[i, j]`` where axis 0 (size 800 at defaults) runs along
the lateral LIDAR y extent [-40, 40] and axis 1 (size 700) along the forward
x extent [0, 70], both at 0.1 m per cell.  Channels 0..4 hold the per-slice
maximum point height above the slice floor over five equal z slices of
[0, 2.5] m; channel 5 holds the density min(1, log(N + 1) / log(16)) of the
in-range point count N.

Boundary rule: a coordinate exactly on a cell or slice edge belongs to the
cell/slice whose lower edge it is (floor semantics), so z == 2.5 at the
defaults falls outside the top slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .kitti_io import DEFAULT_BEV_EXTENTS, PointCloud

DEFAULT_RESOLUTION = 0.1
DEFAULT_SLICE_RANGE = (0.0, 2.5)
DEFAULT_N_SLICES = 5

_LOG16 = math.log(16.0)


def grid_shape(extents=DEFAULT_BEV_EXTENTS, resolution: float = DEFAULT_RESOLUTION):
    """(n_lateral, n_forward) cell counts, round-half-up on span / resolution."""
    if resolution <= 0:
        raise ParameterError(f"resolution must be positive, got {resolution}")
    (x_min, x_max), (y_min, y_max) = extents
    if not (x_max > x_min and y_max > y_min):
        raise ParameterError(f"ill-ordered extents {extents}")
    n_fwd = int(math.floor((x_max - x_min) / resolution + 0.5))
    n_lat = int(math.floor((y_max - y_min) / resolution + 0.5))
    if n_fwd < 1 or n_lat < 1:
        raise ParameterError("extents smaller than one cell")
    return n_lat, n_fwd


def point_cell_indices(x, y, extents, resolution):
    """Floor cell indices (i_lateral, j_forward) for coordinate arrays."""
    (x_min, _), (y_min, _) = extents
    i = np.floor((np.asarray(y, dtype=np.float64) - y_min) / resolution).astype(np.int64)
    j = np.floor((np.asarray(x, dtype=np.float64) - x_min) / resolution).astype(np.int64)
    return i, j


def footprint_cell_rect(x0, x1, y0, y1, extents, resolution):
    """Half-open cell rectangle (i0, j0, i1, j1) covering a metric rectangle.

    Clipped to the grid; empty footprints clip to a zero-area rectangle.
    Accepts scalars or arrays.
    """
    (x_min, _), (y_min, _) = extents
    n_lat, n_fwd = grid_shape(extents, resolution)
    j0 = np.clip(np.floor((np.asarray(x0) - x_min) / resolution), 0, n_fwd).astype(np.int64)
    j1 = np.clip(np.ceil((np.asarray(x1) - x_min) / resolution), 0, n_fwd).astype(np.int64)
    i0 = np.clip(np.floor((np.asarray(y0) - y_min) / resolution), 0, n_lat).astype(np.int64)
    i1 = np.clip(np.ceil((np.asarray(y1) - y_min) / resolution), 0, n_lat).astype(np.int64)
    return i0, j0, np.maximum(i1, i0), np.maximum(j1, j0)


@dataclass(eq=False)
class BevMap:
    """The encoded BEV grid plus the metadata needed to invert cell indices."""

    grid: np.ndarray  # (n_lat, n_fwd, n_slices + 1)
    extents: tuple  # ((x_min, x_max), (y_min, y_max)) LIDAR meters
    resolution: float
    slice_bounds: np.ndarray  # n_slices + 1 ascending z values

    @property
    def n_slices(self) -> int:
        return self.grid.shape[2] - 1

    @property
    def density(self) -> np.ndarray:
        return self.grid[:, :, -1]


@dataclass(eq=False)
class OccupancyIntegral:
    """Summed-area table of per-cell point counts.

    ``table[i, j]`` is the number of points whose cell indices are < (i, j)
    on both axes, so the table is (n_lat + 1, n_fwd + 1) with zero first
    row/column.
    """

    table: np.ndarray
    extents: tuple
    resolution: float

    @property
    def n_lat(self) -> int:
        return self.table.shape[0] - 1

    @property
    def n_fwd(self) -> int:
        return self.table.shape[1] - 1


def density_value(n: int) -> float:
    """min(1, log(n + 1) / log(16)) for a cell holding n points."""
    if n < 0:
        raise ParameterError(f"count must be non-negative, got {n}")
    return min(1.0, math.log(n + 1.0) / _LOG16)


def build_bev_map(
    cloud: PointCloud,
    extents=DEFAULT_BEV_EXTENTS,
    resolution: float = DEFAULT_RESOLUTION,
    slice_range: tuple[float, float] = DEFAULT_SLICE_RANGE,
    n_slices: int = DEFAULT_N_SLICES,
) -> BevMap:
    """Encode a point cloud into height slices plus a density channel.

    Height channel k stores, per cell, the maximum of (z - slice_k_floor)
    over the cell's points inside slice k, or 0 when the slice is empty.
    The density channel counts every point with a valid slice index.
    """
    z_lo, z_hi = slice_range
    if n_slices < 1:
        raise ParameterError(f"n_slices must be >= 1, got {n_slices}")
    if not z_hi > z_lo:
        raise ParameterError(f"empty slice range {slice_range}")
    n_lat, n_fwd = grid_shape(extents, resolution)

    grid = np.zeros((n_lat, n_fwd, n_slices + 1), dtype=np.float64)
    slice_h = (z_hi - z_lo) / n_slices
    slice_bounds = z_lo + slice_h * np.arange(n_slices + 1, dtype=np.float64)

    if len(cloud) > 0:
        x = cloud.points[:, 0].astype(np.float64)
        y = cloud.points[:, 1].astype(np.float64)
        z = cloud.points[:, 2].astype(np.float64)
        i, j = point_cell_indices(x, y, extents, resolution)
        k = np.floor((z - z_lo) / slice_h).astype(np.int64)
        keep = (i >= 0) & (i < n_lat) & (j >= 0) & (j < n_fwd) & (k >= 0) & (k < n_slices)
        i, j, k, z = i[keep], j[keep], k[keep], z[keep]

        rel = z - (z_lo + k * slice_h)
        flat = np.zeros(n_lat * n_fwd * n_slices, dtype=np.float64)
        np.maximum.at(flat, (i * n_fwd + j) * n_slices + k, rel)
        grid[:, :, :n_slices] = flat.reshape(n_lat, n_fwd, n_slices)

        counts = np.bincount(i * n_fwd + j, minlength=n_lat * n_fwd).reshape(n_lat, n_fwd)
        with np.errstate(divide="ignore"):
            grid[:, :, n_slices] = np.minimum(1.0, np.log(counts + 1.0) / _LOG16)

    return BevMap(grid=grid, extents=extents, resolution=resolution, slice_bounds=slice_bounds)


def build_occupancy_integral(
    cloud: PointCloud,
    extents=DEFAULT_BEV_EXTENTS,
    resolution: float = DEFAULT_RESOLUTION,
) -> OccupancyIntegral:
    """Summed-area table over per-cell counts of all in-grid points (any z)."""
    n_lat, n_fwd = grid_shape(extents, resolution)
    table = np.zeros((n_lat + 1, n_fwd + 1), dtype=np.int64)
    if len(cloud) > 0:
        x = cloud.points[:, 0].astype(np.float64)
        y = cloud.points[:, 1].astype(np.float64)
        i, j = point_cell_indices(x, y, extents, resolution)
        keep = (i >= 0) & (i < n_lat) & (j >= 0) & (j < n_fwd)
        counts = np.bincount(
            i[keep] * n_fwd + j[keep], minlength=n_lat * n_fwd
        ).reshape(n_lat, n_fwd)
        table[1:, 1:] = counts.cumsum(axis=0).cumsum(axis=1)
    return OccupancyIntegral(table=table, extents=extents, resolution=resolution)


def area_sum(integral: OccupancyIntegral, rect) -> int:
    """Point count inside the half-open cell rectangle (i0, j0, i1, j1)."""
    i0, j0, i1, j1 = (int(v) for v in rect)
    t = integral.table
    if not (0 <= i0 <= i1 <= integral.n_lat and 0 <= j0 <= j1 <= integral.n_fwd):
        raise ParameterError(f"rect {rect} outside table bounds or ill-ordered")
    return int(t[i1, j1] - t[i0, j1] - t[i1, j0] + t[i0, j0])


def dump_bev_channels(bev_map: BevMap, directory, prefix: str = "bev") -> list[str]:
    """Write one 16-bit binary PGM per channel plus a sidecar scale file.

    Channel values are scaled linearly so the channel maximum maps to 65535
    (an all-zero channel stays zero); the per-channel scale factors go into
    ``<prefix>_scales.txt``.  Returns the written file names.
    """
    import os

    written = []
    scales = []
    for ch in range(bev_map.grid.shape[2]):
        data = bev_map.grid[:, :, ch]
        vmax = float(data.max()) if data.size else 0.0
        scale = 65535.0 / vmax if vmax > 0 else 0.0
        img = np.floor(data * scale + 0.5).astype(np.uint16) if scale > 0 else np.zeros(
            data.shape, dtype=np.uint16
        )
        name = f"{prefix}_ch{ch}.pgm"
        path = os.path.join(directory, name)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
            fh.write(img.astype(">u2").tobytes())
        written.append(name)
        scales.append((ch, vmax, scale))
    scale_name = f"{prefix}_scales.txt"
    with open(os.path.join(directory, scale_name), "w") as fh:
        fh.write("channel vmax scale\n")
        for ch, vmax, scale in scales:
            fh.write(f"{ch} {vmax!r} {scale!r}\n")
    written.append(scale_name)
    return written
