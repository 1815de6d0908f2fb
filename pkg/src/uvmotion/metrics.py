"""Quality metrics: cropping ratio, distortion, stability, stitching score.

Cropping and distortion come from a global homography fitted from each
output frame back to its input frame. Stability reads the spectrum of
frame-to-frame vertex motion. The stitching score transports matched points
through each camera's mesh warp and measures how far apart they land.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AtInfinity, InsufficientTexture, NoMatches, NumericalError, TooShort, UVMotionError
from .geometry import RobustConfig, apply_homography, robust_homography
from .matching import MatcherConfig, detect_and_match

log = logging.getLogger(__name__)

MIN_FIT_PAIRS = 8


@dataclass
class StabilizationReport:
    cropping: float
    distortion: float
    stability: float
    per_frame: dict = field(default_factory=dict)


@dataclass
class StitchReport:
    per_frame_error: list  # NaN where a frame had no matches
    score: float


def _fit_once(inp, out, cfg, robust, seed, predict=None):
    try:
        ms = detect_and_match(out, inp, cfg=cfg, predict=predict)
    except UVMotionError as exc:
        raise InsufficientTexture(str(exc)) from exc
    if len(ms) < MIN_FIT_PAIRS:
        raise InsufficientTexture(f"only {len(ms)} matches between input and output")
    try:
        H, mask = robust_homography(ms.src, ms.dst, robust, seed=seed)
    except NumericalError as exc:
        raise InsufficientTexture(str(exc)) from exc
    if mask.sum() < MIN_FIT_PAIRS:
        raise InsufficientTexture(f"only {int(mask.sum())} inliers between input and output")
    return H


def fit_output_to_input(inp, out, cfg=MatcherConfig(), robust=RobustConfig(), seed=0):
    """Homography taking output pixel positions to input pixel positions.

    A first fit from shift-guided matches seeds a second, guided pass whose
    block searches are centred on the first fit's predictions, so matches
    cover the frame even under zoom.
    """
    H = _fit_once(inp, out, cfg, robust, seed)
    try:
        return _fit_once(inp, out, cfg, robust, seed, predict=lambda p: apply_homography(H, p))
    except (InsufficientTexture, AtInfinity):
        return H


def area_scale(H):
    """Geometric mean of the singular values of the affine block, clamped to 1."""
    s = np.linalg.svd(np.asarray(H, float)[:2, :2] / H[2, 2], compute_uv=False)
    return float(min(1.0, np.sqrt(s[0] * s[1])))


def anisotropy(H):
    """Smaller over larger eigenvalue magnitude of the affine block."""
    ev = np.abs(np.linalg.eigvals(np.asarray(H, float)[:2, :2] / H[2, 2]))
    return float(ev.min() / ev.max()) if ev.max() > 0 else 0.0


def valid_mask(frame):
    """Pixels that are not pure black."""
    f = np.asarray(frame)
    return f.any(axis=-1) if f.ndim == 3 else f != 0


def _per_frame_fits(inputs, outputs, cfg, robust, masks):
    if len(inputs) != len(outputs):
        raise ValueError(f"{len(inputs)} input frames but {len(outputs)} output frames")
    fits = []
    for i, (a, b) in enumerate(zip(inputs, outputs)):
        try:
            fits.append(fit_output_to_input(a, b, cfg, robust, seed=i))
        except InsufficientTexture as exc:
            m = masks[i] if masks is not None else valid_mask(b)
            log.info("frame %d: fit failed (%s), using mask area", i, exc)
            fits.append(float(np.mean(m)))
    return fits


def cropping_ratio(inputs, outputs, cfg=MatcherConfig(), robust=RobustConfig(), masks=None):
    """Mean per-frame retained-area ratio, and the per-frame series."""
    fits = _per_frame_fits(inputs, outputs, cfg, robust, masks)
    per = [f if isinstance(f, float) else area_scale(f) for f in fits]
    return float(np.mean(per)), per


def distortion(inputs, outputs, cfg=MatcherConfig(), robust=RobustConfig(), masks=None):
    """Minimum per-frame anisotropy (frames without a fit count as 1), and the series."""
    fits = _per_frame_fits(inputs, outputs, cfg, robust, masks)
    per = [1.0 if isinstance(f, float) else anisotropy(f) for f in fits]
    return float(np.min(per)), per


def crop_and_distortion(inputs, outputs, cfg=MatcherConfig(), robust=RobustConfig(), masks=None):
    """Both metrics from a single set of fits."""
    fits = _per_frame_fits(inputs, outputs, cfg, robust, masks)
    crop = [f if isinstance(f, float) else area_scale(f) for f in fits]
    dist = [1.0 if isinstance(f, float) else anisotropy(f) for f in fits]
    return float(np.mean(crop)), crop, float(np.min(dist)), dist


def stability(trajectories, low=(2, 6)):
    """Share of motion energy in low frequency bins.

    ``trajectories`` is a profile set or an ``(N, ..., 2)`` array. Each
    vertex component is differenced over time; of its DFT, bins
    ``low[0]..low[1]`` are compared against bins ``2..L//2`` where ``L`` is
    the differenced length. A component with no energy there counts as 1.
    """
    arr = getattr(trajectories, "series", trajectories)
    arr = np.asarray(arr, dtype=float)
    n = arr.shape[0]
    if n < 8:
        raise TooShort(f"stability needs at least 8 frames, got {n}")
    d = np.diff(arr.reshape(n, -1), axis=0)
    L = d.shape[0]
    spec = np.abs(np.fft.rfft(d, axis=0)) ** 2  # bins 0..L//2
    total = spec.sum(axis=0)
    den = spec[2:L // 2 + 1].sum(axis=0)
    num = spec[low[0]:min(low[1], L // 2) + 1].sum(axis=0)
    flat = den <= 1e-20 * total
    ratio = np.where(flat | (total == 0), 1.0, num / np.where(den > 0, den, 1.0))
    return float(ratio.mean())


def _interp_disp(wm, pts):
    """Bilinear interpolation of vertex displacement at frame positions ``pts``."""
    g = wm.grid
    cw, ch = g.cell_size
    m, n = g.cells
    fx, fy = pts[:, 0] / cw, pts[:, 1] / ch
    c = np.clip(np.floor(fx).astype(int), 0, n - 1)
    r = np.clip(np.floor(fy).astype(int), 0, m - 1)
    u, v = fx - c, fy - r
    D = wm.displacement
    return ((1 - u)[:, None] * (1 - v)[:, None] * D[r, c] + u[:, None] * (1 - v)[:, None] * D[r, c + 1]
            + u[:, None] * v[:, None] * D[r + 1, c + 1] + (1 - u)[:, None] * v[:, None] * D[r + 1, c])


def transport(wm, pts, offset=(0.0, 0.0)):
    """Where canvas points of a camera placed at ``offset`` land after its warp."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return pts + _interp_disp(wm, pts - np.asarray(offset, float))


def stitching_score(inter_matches, warps_a, warps_b, offsets=((0.0, 0.0), (0.0, 0.0))):
    """Mean transported misalignment per frame and its maximum over frames.

    ``inter_matches[i]`` holds canvas-coordinate pairs from camera A to B at
    frame ``i``; ``warps_a[i]`` and ``warps_b[i]`` are the two warps.
    """
    per = []
    for ms, wa, wb in zip(inter_matches, warps_a, warps_b):
        if len(ms) == 0:
            log.warning("frame %d: %s", ms.frame_index, NoMatches("no inter matches, frame skipped"))
            per.append(float("nan"))
            continue
        pa = transport(wa, ms.src, offsets[0])
        pb = transport(wb, ms.dst, offsets[1])
        per.append(float(np.hypot(*(pa - pb).T).mean()))
    if not per or np.all(np.isnan(per)):
        raise NoMatches("no frame has inter matches")
    return StitchReport(per, float(np.nanmax(per)))


def write_metrics_json(path, metrics):
    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, (np.floating, float)):
            return None if not np.isfinite(x) else float(x)
        if isinstance(x, np.integer):
            return int(x)
        return x

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean(metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")
