"""Per-vertex motion fields on a regular mesh.

Fields store displacements, i.e. where a vertex content moves to minus where
it was: ``H(v) - v`` for a model ``H`` that maps source onto destination.
Feature residuals use the same convention, ``dst - H(src)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .errors import AtInfinity, DegenerateInput, FrameMismatch, GridMismatch
from .geometry import apply_homography, estimate_homography_dlt


@dataclass(frozen=True)
class MeshGrid:
    frame_size: tuple  # (w, h) px
    cells: tuple = (16, 16)  # (m rows, n cols)

    def __post_init__(self):
        w, h = self.frame_size
        m, n = self.cells
        if w <= 0 or h <= 0 or m < 1 or n < 1:
            raise ValueError(f"invalid mesh {self.cells} over frame {self.frame_size}")

    @property
    def shape(self):
        """Vertex lattice shape ``(m + 1, n + 1)``."""
        return self.cells[0] + 1, self.cells[1] + 1

    @property
    def cell_size(self):
        return self.frame_size[0] / self.cells[1], self.frame_size[1] / self.cells[0]

    @property
    def vertices(self):
        """``(m + 1, n + 1, 2)`` vertex positions, x then y."""
        w, h = self.frame_size
        m, n = self.cells
        xs = np.arange(n + 1) * (w / n)
        ys = np.arange(m + 1) * (h / m)
        # pin the far edge exactly on the frame border
        xs[-1], ys[-1] = w, h
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def cell_of(self, points):
        """Cell ``(row, col)`` of each point, half-open intervals, clipped to the mesh."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        cw, ch = self.cell_size
        col = np.clip(np.floor(pts[:, 0] / cw).astype(int), 0, self.cells[1] - 1)
        row = np.clip(np.floor(pts[:, 1] / ch).astype(int), 0, self.cells[0] - 1)
        return row, col


@dataclass
class MotionField:
    grid: MeshGrid
    kind: str
    frame_index: int
    vectors: np.ndarray  # (m + 1, n + 1, 2)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.shape != self.grid.shape + (2,):
            raise GridMismatch(f"field shape {self.vectors.shape} does not fit mesh {self.grid.cells}")
        if not np.isfinite(self.vectors).all():
            raise ValueError("motion field has non-finite components")


@dataclass(frozen=True)
class PropagationConfig:
    ellipse_semi_axes: tuple = (2.0, 2.0)  # (rx, ry) in cell units
    min_pairs_per_cell: int = 8
    spatial_median_window: int = 3

    def __post_init__(self):
        rx, ry = self.ellipse_semi_axes
        if rx <= 0 or ry <= 0:
            raise ValueError("ellipse semi-axes must be positive")
        if self.spatial_median_window not in (1, 3, 5):
            raise ValueError("spatial_median_window must be 1, 3 or 5")
        if self.min_pairs_per_cell < 4:
            raise ValueError("min_pairs_per_cell must be at least 4")


def zero_field(grid, kind, frame):
    return MotionField(grid, kind, frame, np.zeros(grid.shape + (2,)))


def per_cell_homographies(ms, grid: MeshGrid, global_h, cfg=PropagationConfig()):
    """``(m, n, 3, 3)`` array of per-cell models; sparse or degenerate cells get ``global_h``."""
    m, n = grid.cells
    out = np.broadcast_to(np.asarray(global_h, dtype=float), (m, n, 3, 3)).copy()
    if len(ms) == 0:
        return out
    row, col = grid.cell_of(ms.src)
    flat = row * n + col
    counts = np.bincount(flat, minlength=m * n)
    for c in np.flatnonzero(counts >= cfg.min_pairs_per_cell):
        sel = flat == c
        try:
            out[c // n, c % n] = estimate_homography_dlt(ms.src[sel], ms.dst[sel])
        except DegenerateInput:
            pass
    return out


def global_vertex_motion(grid: MeshGrid, h_source, frame, kind=None):
    """Displacement ``H(v) - v`` at every vertex.

    ``h_source`` is one ``(3, 3)`` homography or an ``(m, n, 3, 3)`` per-cell
    array. With per-cell models a vertex takes the mean prediction of the
    cells that touch it.
    """
    V = grid.vertices
    h_source = np.asarray(h_source, dtype=float)
    if h_source.shape == (3, 3):
        disp = apply_homography(h_source, V.reshape(-1, 2)).reshape(V.shape) - V
        return MotionField(grid, kind or "inter", frame, disp)

    m, n = grid.cells
    if h_source.shape != (m, n, 3, 3):
        raise GridMismatch(f"expected {(m, n, 3, 3)} cell models, got {h_source.shape}")
    acc = np.zeros(V.shape)
    cnt = np.zeros(grid.shape + (1,))
    # each cell predicts its four corners
    for dr in (0, 1):
        for dc in (0, 1):
            corners = V[dr:dr + m, dc:dc + n]  # (m, n, 2)
            x, y = corners[..., 0], corners[..., 1]
            H = h_source
            u = H[..., 0, 0] * x + H[..., 0, 1] * y + H[..., 0, 2]
            v = H[..., 1, 0] * x + H[..., 1, 1] * y + H[..., 1, 2]
            w = H[..., 2, 0] * x + H[..., 2, 1] * y + H[..., 2, 2]
            if np.any(np.abs(w) < 1e-12):
                raise AtInfinity("a vertex maps to the line at infinity")
            acc[dr:dr + m, dc:dc + n] += np.stack([u / w, v / w], axis=-1) - corners
            cnt[dr:dr + m, dc:dc + n] += 1
    return MotionField(grid, kind or "intra", frame, acc / cnt)


def residual_motions(ms, h_source, grid: MeshGrid):
    """Feature positions and their residual displacement ``dst - H(src)``.

    ``H`` is the model of the cell containing the feature for a per-cell
    array, or the single global model.
    """
    if len(ms) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    h_source = np.asarray(h_source, dtype=float)
    if h_source.shape == (3, 3):
        pred = apply_homography(h_source, ms.src)
    else:
        row, col = grid.cell_of(ms.src)
        H = h_source[row, col]  # (M, 3, 3)
        x = np.einsum("mij,mj->mi", H[:, :2, :2], ms.src) + H[:, :2, 2]
        w = np.einsum("mj,mj->m", H[:, 2, :2], ms.src) + H[:, 2, 2]
        pred = x / w[:, None]
    return ms.src.copy(), ms.dst - pred


def propagate_and_refine(positions, residuals, grid: MeshGrid, cfg=PropagationConfig()):
    """Spread residuals to vertices inside each feature's ellipse, then median-filter.

    Every vertex takes the component-wise median of its candidates (zero when
    it has none), followed by a component-wise spatial median over the
    vertex lattice.
    """
    out = np.zeros(grid.shape + (2,))
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    residuals = np.asarray(residuals, dtype=float).reshape(-1, 2)
    if len(positions):
        cw, ch = grid.cell_size
        rx, ry = cfg.ellipse_semi_axes[0] * cw, cfg.ellipse_semi_axes[1] * ch
        V = grid.vertices.reshape(-1, 2)
        d = ((V[:, None, 0] - positions[None, :, 0]) / rx) ** 2 \
            + ((V[:, None, 1] - positions[None, :, 1]) / ry) ** 2
        inside = d <= 1.0  # (vertices, features)
        has = inside.any(axis=1)
        if has.any():
            cand = np.where(inside[has, :, None], residuals[None], np.nan)
            out.reshape(-1, 2)[has] = np.nanmedian(cand, axis=1)
    k = cfg.spatial_median_window
    if k > 1:
        for c in range(2):
            out[..., c] = median_filter(out[..., c], size=k, mode="nearest")
    return out


def assemble_field(refined, global_field: MotionField):
    refined = np.asarray(refined, dtype=float)
    if refined.shape != global_field.vectors.shape:
        raise GridMismatch(f"refined shape {refined.shape} vs field {global_field.vectors.shape}")
    return MotionField(global_field.grid, global_field.kind, global_field.frame_index,
                       global_field.vectors + refined)


def unified_field(intra: MotionField, inter: MotionField):
    if intra.grid != inter.grid:
        raise GridMismatch("intra and inter fields use different meshes")
    if intra.frame_index != inter.frame_index:
        raise FrameMismatch(f"frame {intra.frame_index} vs {inter.frame_index}")
    return MotionField(intra.grid, "unified", intra.frame_index, intra.vectors + inter.vectors)


def intra_field(ms, grid, global_h, frame, cfg=PropagationConfig()):
    """Full chain for one intra match set: cell models, global motion, refined residuals."""
    cells = per_cell_homographies(ms, grid, global_h, cfg)
    base = global_vertex_motion(grid, cells, frame, kind="intra")
    pos, res = residual_motions(ms, cells, grid)
    return assemble_field(propagate_and_refine(pos, res, grid, cfg), base)


def inter_field(ms, grid, global_h, frame, cfg=PropagationConfig(), origin=(0.0, 0.0)):
    """Full chain for one inter match set.

    ``ms`` and ``global_h`` live in a coordinate frame where the mesh origin
    sits at ``origin`` (a camera's offset on the shared canvas).
    """
    ox, oy = origin
    shift = np.array([[1.0, 0.0, ox], [0.0, 1.0, oy], [0.0, 0.0, 1.0]])
    H = np.linalg.inv(shift) @ np.asarray(global_h, dtype=float) @ shift
    base = global_vertex_motion(grid, H / H[2, 2], frame, kind="inter")
    if len(ms):
        pos = ms.src - (ox, oy)
        res = ms.dst - apply_homography(global_h, ms.src)
    else:
        pos, res = np.zeros((0, 2)), np.zeros((0, 2))
    return assemble_field(propagate_and_refine(pos, res, grid, cfg), base)


def write_fields_csv(path, fields):
    """Rows ``frame,vertex_row,vertex_col,kind,dx,dy``; ``fields`` may hold several kinds."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "vertex_row", "vertex_col", "kind", "dx", "dy"])
        for f in fields:
            rows, cols = f.grid.shape
            for r in range(rows):
                for c in range(cols):
                    dx, dy = f.vectors[r, c]
                    wr.writerow([f.frame_index, r, c, f.kind, repr(float(dx)), repr(float(dy))])
