"""Per-vertex time series built from motion fields."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, NonContiguousFrames, ShapeMismatch

ROLES = ("trajectory", "stitching", "smoothed", "optimized-stitching")


@dataclass
class VertexProfileSet:
    """``series[i, r, c]`` is the 2D value of vertex ``(r, c)`` at frame ``i``."""

    grid: object
    camera: int
    role: str
    series: np.ndarray  # (N, m + 1, n + 1, 2)

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=float)
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if self.series.ndim != 4 or self.series.shape[1:] != tuple(self.grid.shape) + (2,):
            raise ShapeMismatch(f"series shape {self.series.shape} does not fit mesh {self.grid.cells}")

    @property
    def n_frames(self):
        return self.series.shape[0]

    def with_series(self, series, role=None):
        return VertexProfileSet(self.grid, self.camera, role or self.role, series)


def _stack(fields):
    if not fields:
        raise ShapeMismatch("no fields given")
    grid = fields[0].grid
    for f in fields:
        if f.grid != grid:
            raise GridMismatch("fields use different meshes")
    idx = np.array([f.frame_index for f in fields])
    if np.any(np.diff(idx) != 1):
        raise NonContiguousFrames(f"frame indices must ascend by one, got {idx.tolist()}")
    return grid, np.stack([f.vectors for f in fields])


def accumulate_trajectories(fields, camera=0):
    """Running sum of intra fields; ``T(0)`` equals the first field."""
    grid, arr = _stack(fields)
    return VertexProfileSet(grid, camera, "trajectory", np.cumsum(arr, axis=0))


def collect_stitch_profiles(fields, camera=0):
    """Inter fields copied frame by frame."""
    grid, arr = _stack(fields)
    return VertexProfileSet(grid, camera, "stitching", arr.copy())


def write_profiles_csv(path, profile_sets):
    """Rows ``camera,vertex_row,vertex_col,frame,role,x,y``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["camera", "vertex_row", "vertex_col", "frame", "role", "x", "y"])
        for ps in profile_sets:
            N, rows, cols, _ = ps.series.shape
            for r in range(rows):
                for c in range(cols):
                    for i in range(N):
                        x, y = ps.series[i, r, c]
                        wr.writerow([ps.camera, r, c, i, ps.role, repr(float(x)), repr(float(y))])
