import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvmotion.errors import FrameMismatch, GridMismatch
from uvmotion.geometry import apply_homography, translation
from uvmotion.matching import MatchSet
from uvmotion.motionfield import (
    MeshGrid,
    MotionField,
    PropagationConfig,
    assemble_field,
    global_vertex_motion,
    inter_field,
    intra_field,
    per_cell_homographies,
    propagate_and_refine,
    residual_motions,
    unified_field,
    write_fields_csv,
    zero_field,
)

from conftest import random_homography

GRID = MeshGrid((960, 540), (16, 16))


def _dense_pairs(H, step=12.0):
    xs, ys = np.meshgrid(np.arange(3, 960, step), np.arange(3, 540, step))
    src = np.stack([xs.ravel(), ys.ravel()], axis=1)
    return src, apply_homography(H, src)


def test_mesh_layout():
    V = GRID.vertices
    assert V.shape == (17, 17, 2)
    np.testing.assert_array_equal(V[0, 0], (0, 0))
    np.testing.assert_array_equal(V[-1, -1], (960, 540))
    np.testing.assert_allclose(np.diff(V[0, :, 0]), 60.0, atol=1e-9)
    np.testing.assert_allclose(np.diff(V[:, 0, 1]), 33.75, atol=1e-9)


def test_cell_assignment_half_open():
    row, col = GRID.cell_of([[60.0, 33.75], [59.999, 33.7], [960.0, 540.0]])
    assert list(zip(row, col)) == [(1, 1), (0, 0), (15, 15)]


def test_per_cell_single_translation():
    H = translation(4.0, -2.5)
    src, dst = _dense_pairs(H, 8.0)
    cells = per_cell_homographies(MatchSet("intra", 1, 0, src, dst), GRID, np.eye(3))
    np.testing.assert_allclose(cells, np.broadcast_to(H, cells.shape), atol=1e-6)


def test_per_cell_empty_uses_global():
    G = translation(1, 1)
    cells = per_cell_homographies(MatchSet("intra", 1, 0, [], []), GRID, G)
    assert np.all(cells == G)


def test_per_cell_two_planes():
    A, B = translation(3.0, 1.0), translation(-2.0, 4.0)
    src, _ = _dense_pairs(np.eye(3), 8.0)
    left = src[:, 0] < 480
    dst = np.where(left[:, None], src + (3.0, 1.0), src + (-2.0, 4.0))
    cells = per_cell_homographies(MatchSet("intra", 1, 0, src, dst), GRID, np.eye(3))
    cw, ch = GRID.cell_size
    for r in range(16):
        for c in range(16):
            centre = ((c + 0.5) * cw, (r + 0.5) * ch)
            want = apply_homography(A if c < 8 else B, centre)
            assert np.hypot(*(apply_homography(cells[r, c], centre) - want)) < 1e-3


def test_global_motion_identity_and_translation():
    assert np.all(global_vertex_motion(GRID, np.eye(3), 0).vectors == 0)
    f = global_vertex_motion(GRID, translation(2, -1), 0)
    np.testing.assert_allclose(f.vectors, np.broadcast_to((2.0, -1.0), f.vectors.shape), atol=1e-12)


def test_global_motion_projective_matches_direct(rng):
    H = random_homography(rng)
    f = global_vertex_motion(GRID, H, 3)
    V = GRID.vertices
    for r, c in [(0, 0), (5, 7), (16, 16), (16, 0)]:
        v = V[r, c]
        den = H[2, 0] * v[0] + H[2, 1] * v[1] + H[2, 2]
        want = np.array([(H[0, 0] * v[0] + H[0, 1] * v[1] + H[0, 2]) / den,
                         (H[1, 0] * v[0] + H[1, 1] * v[1] + H[1, 2]) / den]) - v
        np.testing.assert_allclose(f.vectors[r, c], want, atol=1e-9)


def test_boundary_vertices_average_adjacent_cells():
    grid = MeshGrid((100, 100), (2, 2))
    cells = np.broadcast_to(np.eye(3), (2, 2, 3, 3)).copy()
    cells[0, 0] = translation(4, 0)
    f = global_vertex_motion(grid, cells, 1)
    np.testing.assert_allclose(f.vectors[0, 0], (4, 0))
    np.testing.assert_allclose(f.vectors[0, 1], (2, 0))
    np.testing.assert_allclose(f.vectors[1, 1], (1, 0))
    np.testing.assert_allclose(f.vectors[2, 2], (0, 0))


def test_residuals_zero_and_offset(rng):
    H = random_homography(rng)
    src, dst = _dense_pairs(H, 40.0)
    ms = MatchSet("inter", 0, 0, src, dst, partner=1)
    _, res = residual_motions(ms, H, GRID)
    np.testing.assert_allclose(res, 0, atol=1e-9)
    ms = MatchSet("inter", 0, 0, src, dst + 1.0, partner=1)
    _, res = residual_motions(ms, H, GRID)
    np.testing.assert_allclose(res, 1.0, atol=1e-9)
    pos, res = residual_motions(MatchSet("intra", 0, 0, [], []), H, GRID)
    assert pos.shape == res.shape == (0, 2)


def test_propagate_single_candidate():
    grid = MeshGrid((100, 100), (4, 4))
    cfg = PropagationConfig(ellipse_semi_axes=(0.5, 0.5), spatial_median_window=1)
    out = propagate_and_refine([[50.0, 50.0]], [[4.0, 0.0]], grid, cfg)
    np.testing.assert_array_equal(out[2, 2], (4, 0))
    mask = np.ones((5, 5), bool)
    mask[2, 2] = False
    assert np.all(out[mask] == 0)


def test_propagate_median_rejects_outlier():
    grid = MeshGrid((100, 100), (4, 4))
    cfg = PropagationConfig(ellipse_semi_axes=(0.3, 0.3), spatial_median_window=1)
    pos = [[50.0, 50.0], [51.0, 50.0], [50.0, 51.0]]
    out = propagate_and_refine(pos, [[1, 0], [3, 0], [100, 0]], grid, cfg)
    np.testing.assert_array_equal(out[2, 2], (3, 0))


def test_propagate_zero_residuals():
    assert np.all(propagate_and_refine(np.ones((5, 2)) * 100, np.zeros((5, 2)), GRID) == 0)


def test_propagate_permutation_invariant(rng):
    pos = rng.uniform([0, 0], [960, 540], (80, 2))
    res = rng.normal(0, 2, (80, 2))
    perm = rng.permutation(80)
    np.testing.assert_array_equal(propagate_and_refine(pos, res, GRID),
                                  propagate_and_refine(pos[perm], res[perm], GRID))


def test_shrinking_ellipse_never_adds_candidates(rng):
    # count candidates through a residual of ones; the median leaves 1 where any exist
    pos = rng.uniform([0, 0], [960, 540], (30, 2))
    big = propagate_and_refine(pos, np.ones((30, 2)), GRID, PropagationConfig((2.0, 2.0), 8, 1))
    small = propagate_and_refine(pos, np.ones((30, 2)), GRID, PropagationConfig((1.0, 0.7), 8, 1))
    assert np.all(small[..., 0] <= big[..., 0])


def test_assemble_and_model_consistent_matches(rng):
    H = random_homography(rng, 0.3)
    src, dst = _dense_pairs(H, 10.0)
    ms = MatchSet("intra", 2, 0, src, dst)
    cells = per_cell_homographies(ms, GRID, H)
    base = global_vertex_motion(GRID, cells, 2)
    full = intra_field(ms, GRID, H, 2)
    np.testing.assert_allclose(full.vectors, base.vectors, atol=1e-9)


def test_assemble_identities(rng):
    F = MotionField(GRID, "inter", 0, rng.normal(size=(17, 17, 2)))
    R = rng.normal(size=(17, 17, 2))
    np.testing.assert_array_equal(assemble_field(np.zeros((17, 17, 2)), F).vectors, F.vectors)
    np.testing.assert_array_equal(assemble_field(R, zero_field(GRID, "intra", 0)).vectors, R)
    out = assemble_field(R, F)
    assert out.kind == "inter"
    assert out.vectors[3, 4, 1] == R[3, 4, 1] + F.vectors[3, 4, 1]
    with pytest.raises(GridMismatch):
        assemble_field(np.zeros((3, 3, 2)), F)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_unified_superposition_exact(seed):
    rng = np.random.default_rng(seed)
    a = MotionField(GRID, "intra", 4, rng.normal(0, 10, (17, 17, 2)))
    b = MotionField(GRID, "inter", 4, rng.normal(0, 10, (17, 17, 2)))
    u = unified_field(a, b)
    assert u.kind == "unified"
    assert np.all(u.vectors - (a.vectors + b.vectors) == 0)


def test_unified_cancellation_and_errors(rng):
    F = rng.normal(size=(17, 17, 2))
    u = unified_field(MotionField(GRID, "intra", 1, F), MotionField(GRID, "inter", 1, -F))
    assert np.all(u.vectors == 0)
    with pytest.raises(FrameMismatch):
        unified_field(MotionField(GRID, "intra", 1, F), MotionField(GRID, "inter", 2, F))
    other = MeshGrid((960, 540), (8, 8))
    with pytest.raises(GridMismatch):
        unified_field(MotionField(GRID, "intra", 1, F), zero_field(other, "inter", 1))


def test_inter_field_in_canvas_coordinates():
    # camera at canvas offset (500, 0); the partner sees its content 12 px further left
    grid = MeshGrid((960, 540), (8, 8))
    H = translation(-12.0, 0.0)
    src = np.stack(np.meshgrid(np.arange(520, 940, 20.0), np.arange(20, 520, 20.0)), -1).reshape(-1, 2)
    ms = MatchSet("inter", 0, 0, src, src - (12.0, 0.0), partner=1)
    f = inter_field(ms, grid, H, 0, origin=(500, 0))
    np.testing.assert_allclose(f.vectors, np.broadcast_to((-12.0, 0.0), f.vectors.shape), atol=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        PropagationConfig(spatial_median_window=2)
    with pytest.raises(ValueError):
        PropagationConfig(ellipse_semi_axes=(0, 1))


def test_fields_csv(tmp_path):
    grid = MeshGrid((10, 10), (1, 1))
    f = MotionField(grid, "unified", 7, np.arange(8.0).reshape(2, 2, 2))
    write_fields_csv(tmp_path / "f.csv", [f])
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["frame", "vertex_row", "vertex_col", "kind", "dx", "dy"]
    assert rows[4] == ["7", "1", "1", "unified", "6.0", "7.0"]
