"""Sparse feature matches between frames.

A built-in matcher finds corners per detection cell and pairs them by
zero-mean normalized cross-correlation (ZNCC) block search. Precomputed
matches from any external matcher can be read from JSON match files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .errors import EmptyFrame, ParseError, SchemaError, SizeMismatch, TooFewPairs
from .geometry import PointPair, RobustConfig, robust_homography

log = logging.getLogger(__name__)

KINDS = ("intra", "inter")


@dataclass(frozen=True)
class MatcherConfig:
    grid_cells_for_detection: tuple = (8, 8)
    corners_per_cell: int = 4
    block_radius: int = 8
    search_radius: int = 32
    min_zncc: float = 0.7
    # seed the block search with a phase-correlation estimate of the global shift
    global_guess: bool = True

    def __post_init__(self):
        r, c = self.grid_cells_for_detection
        if r < 1 or c < 1:
            raise ValueError("grid_cells_for_detection must be positive")
        if self.search_radius < 1:
            raise ValueError("search_radius must be >= 1")
        if self.corners_per_cell < 1:
            raise ValueError("corners_per_cell must be >= 1")
        if self.block_radius < 1:
            raise ValueError("block_radius must be >= 1")
        if not -1.0 <= self.min_zncc <= 1.0:
            raise ValueError("min_zncc must lie in [-1, 1]")


@dataclass
class MatchSet:
    """Matched points for one frame pair.

    ``src`` and ``dst`` are ``(M, 2)`` arrays. For intra sets the pair is
    frame ``i-1`` -> frame ``i`` of ``camera``; for inter sets it is
    ``camera`` -> ``partner`` at frame ``i``.
    """

    kind: str
    frame_index: int
    camera: int
    src: np.ndarray
    dst: np.ndarray
    partner: int | None = None
    frame_size: tuple | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.src = np.asarray(self.src, dtype=float).reshape(-1, 2)
        self.dst = np.asarray(self.dst, dtype=float).reshape(-1, 2)
        if len(self.src) != len(self.dst):
            raise SchemaError("src and dst must have equal length")

    def __len__(self):
        return len(self.src)

    @property
    def motions(self):
        """Per-pair motion ``src - dst``."""
        return self.src - self.dst

    @property
    def pairs(self):
        return [PointPair((float(s[0]), float(s[1])), (float(d[0]), float(d[1])))
                for s, d in zip(self.src, self.dst)]

    def subset(self, mask):
        return replace(self, src=self.src[mask], dst=self.dst[mask])

    def reversed(self):
        """Same matches with src and dst swapped (inter sets swap camera and partner)."""
        return replace(self, src=self.dst.copy(), dst=self.src.copy(),
                       camera=self.partner if self.partner is not None else self.camera,
                       partner=self.camera if self.partner is not None else None)


def to_gray(img):
    """BT.601 luma as float32. RGB channel order is assumed for color input."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.float32)
    rgb = img[..., :3].astype(np.float32)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def _check_frames(a, b):
    if a.shape != b.shape:
        raise SizeMismatch(f"frames differ in size: {a.shape[::-1]} vs {b.shape[::-1]}")
    for name, g in (("frame_a", a), ("frame_b", b)):
        if g.size == 0 or float(g.max()) == float(g.min()):
            raise EmptyFrame(f"{name} is constant")


def _roi_bounds(roi, w, h):
    if roi is None:
        return 0, 0, w, h
    x, y, rw, rh = (int(round(v)) for v in roi)
    if x < 0 or y < 0 or rw <= 0 or rh <= 0 or x + rw > w or y + rh > h:
        raise ValueError(f"roi {roi} does not lie inside the {w}x{h} frame")
    return x, y, x + rw, y + rh


def detect_corners(gray, roi, cfg):
    """Up to ``corners_per_cell`` Shi-Tomasi corners in each detection cell.

    Corners stay ``block_radius`` away from the frame border so their
    template fits. Returns an ``(K, 2)`` integer array, cell by cell in
    row-major order.
    """
    h, w = gray.shape
    x0, y0, x1, y1 = roi
    r = cfg.block_radius
    x0, y0 = max(x0, r), max(y0, r)
    x1, y1 = min(x1, w - r), min(y1, h - r)
    if x1 <= x0 or y1 <= y0:
        return np.zeros((0, 2), int)
    rows, cols = cfg.grid_cells_for_detection
    xs = np.linspace(x0, x1, cols + 1).round().astype(int)
    ys = np.linspace(y0, y1, rows + 1).round().astype(int)
    min_dist = max(2, r // 2)
    out = []
    for i in range(rows):
        for j in range(cols):
            cell = gray[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
            if cell.shape[0] < 3 or cell.shape[1] < 3:
                continue
            pts = cv2.goodFeaturesToTrack(cell, cfg.corners_per_cell, 0.01, min_dist, blockSize=3)
            if pts is None:
                continue
            pts = np.rint(pts.reshape(-1, 2)).astype(int) + (xs[j], ys[i])
            out.append(pts)
    if not out:
        return np.zeros((0, 2), int)
    return np.concatenate(out)


def global_shift(gray_a, gray_b, bounds=None):
    """Integer content shift from a to b estimated by phase correlation.

    ``bounds`` is ``(x0, y0, x1, y1)``; the whole frame by default.
    """
    h, w = gray_a.shape
    x0, y0, x1, y1 = bounds if bounds is not None else (0, 0, w, h)
    a = np.ascontiguousarray(gray_a[y0:y1, x0:x1], dtype=np.float64)
    b = np.ascontiguousarray(gray_b[y0:y1, x0:x1], dtype=np.float64)
    if min(a.shape) < 8:
        return 0, 0
    win = cv2.createHanningWindow(a.shape[::-1], cv2.CV_64F)
    (dx, dy), _ = cv2.phaseCorrelate(a, b, win)
    return int(round(dx)), int(round(dy))


def _match_blocks(ga, gb, corners, centres, cfg):
    h, w = ga.shape
    r, s = cfg.block_radius, cfg.search_radius
    src, dst = [], []
    for (x, y), (cx, cy) in zip(corners, centres):
        tmpl = ga[y - r:y + r + 1, x - r:x + r + 1]
        if tmpl.std() < 1e-3:
            continue
        sx0, sy0 = max(cx - s - r, 0), max(cy - s - r, 0)
        sx1, sy1 = min(cx + s + r + 1, w), min(cy + s + r + 1, h)
        if sx1 - sx0 < 2 * r + 1 or sy1 - sy0 < 2 * r + 1:
            continue
        res = cv2.matchTemplate(gb[sy0:sy1, sx0:sx1], tmpl, cv2.TM_CCOEFF_NORMED)
        _, peak, _, (px, py) = cv2.minMaxLoc(res)
        if not np.isfinite(peak) or peak < cfg.min_zncc:
            continue
        # a peak on the search boundary may be a truncated slope, not a maximum
        if px in (0, res.shape[1] - 1) or py in (0, res.shape[0] - 1):
            continue
        src.append((x, y))
        dst.append((sx0 + px + r, sy0 + py + r))
    return np.array(src, float).reshape(-1, 2), np.array(dst, float).reshape(-1, 2)


def detect_and_match(frame_a, frame_b, roi=None, cfg=MatcherConfig(), *,
                     kind="intra", frame_index=0, camera=0, partner=None, guess=None, predict=None):
    """Match corners of ``frame_a`` into ``frame_b``.

    ``roi`` is ``(x, y, w, h)``; when given, corners are only detected inside
    it. ``guess`` is an optional integer shift ``(dx, dy)`` of content from a
    to b that centers the block search; without it a phase-correlation
    estimate is used when ``cfg.global_guess`` is set. ``predict`` maps an
    ``(K, 2)`` array of corners to expected positions in ``frame_b`` and
    overrides ``guess`` (guided matching).
    """
    ga, gb = to_gray(frame_a), to_gray(frame_b)
    _check_frames(ga, gb)
    h, w = ga.shape
    bounds = _roi_bounds(roi, w, h)
    corners = detect_corners(ga, bounds, cfg)
    if predict is not None:
        centres = np.rint(np.asarray(predict(corners.astype(float)), float).reshape(-1, 2))
        centres = centres.astype(int)
    else:
        if guess is None:
            guess = global_shift(ga, gb, bounds) if cfg.global_guess else (0, 0)
        centres = corners + (int(guess[0]), int(guess[1]))
    src, dst = _match_blocks(ga, gb, corners, centres, cfg)
    return MatchSet(kind, frame_index, camera, src, dst, partner=partner, frame_size=(w, h))


def reject_outliers(ms: MatchSet, cfg: RobustConfig = RobustConfig(), seed=0):
    """Fit a robust global homography and keep only its inliers."""
    if len(ms) < 4:
        raise TooFewPairs(f"frame {ms.frame_index}: {len(ms)} pairs, need at least 4")
    H, mask = robust_homography(ms.src, ms.dst, cfg, seed=seed)
    return ms.subset(mask), H


# --- match files -----------------------------------------------------------

def _record_lines(text):
    """Line number of each ``"frame"`` key, in order (for error messages)."""
    lines = []
    for no, ln in enumerate(text.splitlines(), 1):
        lines.extend([no] * ln.count('"frame"'))
    return lines


def load_matches(path, kind=None):
    """Read a JSON match file into one MatchSet per record, sorted by frame.

    ``kind`` (if given) must agree with the file's own ``kind``. Pair
    coordinates are checked against ``frame_size``.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    for key in ("frame_size", "kind", "records"):
        if key not in doc:
            raise SchemaError(f"missing field {key!r}")
    fkind = doc["kind"]
    if fkind not in KINDS:
        raise SchemaError(f"kind must be one of {KINDS}, got {fkind!r}")
    if kind is not None and kind != fkind:
        raise SchemaError(f"expected kind {kind!r}, file declares {fkind!r}")
    fs = doc["frame_size"]
    if not (isinstance(fs, list) and len(fs) == 2 and all(isinstance(v, (int, float)) and v > 0 for v in fs)):
        raise SchemaError("frame_size must be [w, h] with positive entries")
    w, h = float(fs[0]), float(fs[1])
    if not isinstance(doc["records"], list):
        raise SchemaError("records must be a list")
    lines = _record_lines(text)

    out = []
    for n, rec in enumerate(doc["records"]):
        where = f"line {lines[n]}: " if n < len(lines) else f"record {n}: "
        if not isinstance(rec, dict):
            raise SchemaError(where + "record must be an object")
        for key in ("frame", "camera", "pairs"):
            if key not in rec:
                raise SchemaError(where + f"missing field {key!r}")
        frame, cam, partner = rec["frame"], rec["camera"], rec.get("partner")
        if not isinstance(frame, int) or isinstance(frame, bool) or frame < 0:
            raise SchemaError(where + f"frame must be a non-negative integer, got {frame!r}")
        if not isinstance(cam, int) or isinstance(cam, bool) or cam < 0:
            raise SchemaError(where + f"camera must be a non-negative integer, got {cam!r}")
        if fkind == "inter" and partner is None:
            raise SchemaError(where + "inter records need a partner camera")
        try:
            arr = np.array(rec["pairs"], dtype=float).reshape(-1, 4)
        except (ValueError, TypeError) as exc:
            raise SchemaError(where + "pairs must be a list of [sx, sy, dx, dy]") from exc
        if len(rec["pairs"]) and arr.shape[0] != len(rec["pairs"]):
            raise SchemaError(where + "pairs must be a list of [sx, sy, dx, dy]")
        if not np.isfinite(arr).all():
            raise SchemaError(where + "non-finite coordinate")
        xs, ys = arr[:, 0::2], arr[:, 1::2]
        if (xs < 0).any() or (xs > w).any() or (ys < 0).any() or (ys > h).any():
            raise SchemaError(where + f"coordinate outside frame {int(w)}x{int(h)}")
        out.append(MatchSet(fkind, frame, cam, arr[:, :2], arr[:, 2:], partner=partner,
                            frame_size=(int(w), int(h))))
    out.sort(key=lambda m: (m.frame_index, m.camera))
    return out


def save_matches(path, sets, frame_size, kind):
    records = []
    for ms in sets:
        rec = {"frame": int(ms.frame_index), "camera": int(ms.camera)}
        if ms.partner is not None:
            rec["partner"] = int(ms.partner)
        rec["pairs"] = np.hstack([ms.src, ms.dst]).tolist()
        records.append(rec)
    doc = {"frame_size": [int(frame_size[0]), int(frame_size[1])], "kind": kind, "records": records}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
