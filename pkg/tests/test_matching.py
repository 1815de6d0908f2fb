import json

import numpy as np
import pytest

from uvmotion.errors import EmptyFrame, ParseError, SchemaError, SizeMismatch, TooFewPairs
from uvmotion.geometry import RobustConfig, apply_homography
from uvmotion.matching import (
    MatcherConfig,
    MatchSet,
    detect_and_match,
    detect_corners,
    global_shift,
    load_matches,
    reject_outliers,
    save_matches,
    to_gray,
)

from conftest import random_homography, textured


@pytest.fixture(scope="module")
def image():
    return textured(270, 480, seed=3)


def test_self_match_has_zero_motion(image):
    ms = detect_and_match(image, image)
    assert len(ms) > 100
    np.testing.assert_array_equal(ms.motions, 0.0)


def test_shift_by_seven(image):
    shifted = np.zeros_like(image)
    shifted[:, 7:] = image[:, :-7]
    ms = detect_and_match(image, shifted)
    close = np.hypot(*(ms.motions - [-7.0, 0.0]).T) <= 0.5
    assert len(ms) > 50
    assert close.mean() >= 0.9


def test_shift_without_guess_still_within_radius(image):
    shifted = np.roll(image, (3, -5), axis=(0, 1))
    ms = detect_and_match(image, shifted, cfg=MatcherConfig(global_guess=False))
    close = np.all(np.abs(ms.motions - [5.0, -3.0]) <= 0.5, axis=1)
    assert close.mean() >= 0.9


def test_large_shift_needs_guess(image):
    shifted = np.roll(image, 60, axis=1)
    assert global_shift(to_gray(image), to_gray(shifted)) == (60, 0)
    ms = detect_and_match(image, shifted)
    assert (np.abs(ms.motions - [-60.0, 0.0]).max(axis=1) <= 0.5).mean() >= 0.9


def test_constant_frames_rejected():
    gray = np.full((100, 100), 128, np.uint8)
    with pytest.raises(EmptyFrame):
        detect_and_match(gray, gray)


def test_size_mismatch(image):
    with pytest.raises(SizeMismatch):
        detect_and_match(image, image[:-1])


def test_every_detection_cell_contributes(image):
    cfg = MatcherConfig(grid_cells_for_detection=(4, 6))
    pts = detect_corners(to_gray(image), (0, 0, 480, 270), cfg)
    r = cfg.block_radius
    xs = np.linspace(r, 480 - r, 7)
    ys = np.linspace(r, 270 - r, 5)
    cx = np.clip(np.searchsorted(xs, pts[:, 0], side="right") - 1, 0, 5)
    cy = np.clip(np.searchsorted(ys, pts[:, 1], side="right") - 1, 0, 3)
    assert len(set(zip(cy.tolist(), cx.tolist()))) == 24


def test_roi_restricts_detection(image):
    ms = detect_and_match(image, image, roi=(300, 50, 150, 200), kind="inter", partner=1)
    assert len(ms) > 0
    assert (ms.src[:, 0] >= 300).all() and (ms.src[:, 0] < 450).all()
    assert (ms.src[:, 1] >= 50).all() and (ms.src[:, 1] < 250).all()


def test_deterministic(image):
    shifted = np.roll(image, 4, axis=0)
    a = detect_and_match(image, shifted)
    b = detect_and_match(image, shifted)
    np.testing.assert_array_equal(a.src, b.src)
    np.testing.assert_array_equal(a.dst, b.dst)


def test_bt601_gray():
    px = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], np.uint8)
    np.testing.assert_allclose(to_gray(px)[0], [76.245, 149.685, 29.07], rtol=1e-5)


def test_config_validation():
    with pytest.raises(ValueError):
        MatcherConfig(search_radius=0)
    with pytest.raises(ValueError):
        MatcherConfig(corners_per_cell=0)


def _write(tmp_path, doc):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(doc, indent=1))
    return p


def test_load_two_records(tmp_path):
    pairs = [[i, i, i + 1, i] for i in range(5)]
    p = _write(tmp_path, {"frame_size": [64, 48], "kind": "intra",
                          "records": [{"frame": 1, "camera": 0, "pairs": pairs},
                                      {"frame": 0, "camera": 0, "pairs": pairs}]})
    sets = load_matches(p, "intra")
    assert [m.frame_index for m in sets] == [0, 1]
    assert all(len(m) == 5 for m in sets)
    np.testing.assert_array_equal(sets[0].motions, [[-1.0, 0.0]] * 5)


def test_load_empty_pairs(tmp_path):
    p = _write(tmp_path, {"frame_size": [64, 48], "kind": "inter",
                          "records": [{"frame": 0, "camera": 0, "partner": 1, "pairs": []}]})
    (ms,) = load_matches(p)
    assert len(ms) == 0 and ms.partner == 1


def test_load_negative_frame(tmp_path):
    p = _write(tmp_path, {"frame_size": [64, 48], "kind": "intra",
                          "records": [{"frame": -1, "camera": 0, "pairs": []}]})
    with pytest.raises(SchemaError, match=r"line \d+: frame"):
        load_matches(p)


def test_load_missing_field_and_out_of_frame(tmp_path):
    p = _write(tmp_path, {"kind": "intra", "records": []})
    with pytest.raises(SchemaError, match="frame_size"):
        load_matches(p)
    p = _write(tmp_path, {"frame_size": [64, 48], "kind": "intra",
                          "records": [{"frame": 0, "camera": 0, "pairs": [[70, 0, 0, 0]]}]})
    with pytest.raises(SchemaError, match="outside"):
        load_matches(p)


def test_load_parse_error_has_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n"frame_size": [1, 1],\n"kind": oops\n}')
    with pytest.raises(ParseError, match="line 3"):
        load_matches(p)


def test_save_load_round_trip(tmp_path):
    ms = MatchSet("inter", 2, 0, [[1.5, 2.0]], [[3.0, 4.25]], partner=1)
    save_matches(tmp_path / "x.json", [ms], (10, 10), "inter")
    (back,) = load_matches(tmp_path / "x.json", "inter")
    np.testing.assert_array_equal(back.src, ms.src)
    np.testing.assert_array_equal(back.dst, ms.dst)
    assert (back.frame_index, back.camera, back.partner) == (2, 0, 1)


def test_reject_outliers_keeps_true_inliers(rng):
    H = random_homography(rng)
    src = rng.uniform([0, 0], [960, 540], (40, 2))
    dst = apply_homography(H, src)
    dst[30:] = rng.uniform([0, 0], [960, 540], (10, 2))
    ms = MatchSet("intra", 1, 0, src, dst)
    kept, _ = reject_outliers(ms)
    truth = {tuple(p) for p in src[:30]}
    assert sum(tuple(p) in truth for p in kept.src) >= 28
    assert len(kept) <= len(ms)
    np.testing.assert_array_equal(kept.motions, kept.src - kept.dst)


def test_reject_outliers_identity():
    src = np.array([[0, 0], [100, 0], [100, 80], [0, 80], [50, 40], [20, 70]], float)
    ms = MatchSet("intra", 1, 0, src, src)
    kept, H = reject_outliers(ms, RobustConfig())
    np.testing.assert_array_equal(kept.src, src)
    np.testing.assert_allclose(H, np.eye(3), atol=1e-12)


def test_reject_outliers_too_few():
    ms = MatchSet("intra", 1, 0, np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(TooFewPairs):
        reject_outliers(ms)
