"""Mesh warping, pre-calibrated composition and blending.

Pixel centers sit on integer coordinates. A frame of size ``w x h`` covers
source positions ``[0, w-1] x [0, h-1]``; a canvas pixel is valid when its
inverse-mapped source position falls inside that range.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import AtInfinity, DegenerateQuad, EmptyInput, GridMismatch, ShapeMismatch, SizeMismatch
from .geometry import apply_homography

_EDGE_EPS = 1e-6


@dataclass
class WarpMap:
    grid: object
    frame_index: int
    displacement: np.ndarray  # (m + 1, n + 1, 2)

    def __post_init__(self):
        self.displacement = np.asarray(self.displacement, dtype=float)
        if self.displacement.shape != tuple(self.grid.shape) + (2,):
            raise GridMismatch(f"displacement shape {self.displacement.shape} does not fit the mesh")
        if not np.isfinite(self.displacement).all():
            raise ValueError("warp displacement has non-finite components")


@dataclass
class Canvas:
    image: np.ndarray  # (H, W, C) float32
    mask: np.ndarray  # (H, W) bool

    @property
    def size(self):
        return self.image.shape[1], self.image.shape[0]

    def to_uint8(self):
        out = np.clip(np.rint(self.image), 0, 255).astype(np.uint8)
        out[~self.mask] = 0
        return out


def build_warp_maps(solution, trajs, stabilize_only=False):
    """Per camera, per frame displacement ``V-hat + T-hat - T`` (or ``T-hat - T``)."""
    out = []
    for c, T in enumerate(trajs):
        Th = solution.smoothed[c]
        if Th.series.shape != T.series.shape:
            raise ShapeMismatch("smoothed and raw trajectories differ in shape")
        disp = Th.series - T.series
        if not stabilize_only:
            Vh = solution.stitch[c]
            if Vh.series.shape != T.series.shape:
                raise ShapeMismatch("stitching profiles and trajectories differ in shape")
            disp = Vh.series + disp
        out.append([WarpMap(T.grid, i, disp[i]) for i in range(T.n_frames)])
    return out


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _check_quads(P):
    """Raise DegenerateQuad unless every warped cell is a strictly convex, positively oriented quad."""
    a, b, c, d = P[:-1, :-1], P[:-1, 1:], P[1:, 1:], P[1:, :-1]
    ring = [a, b, c, d]
    bad = np.zeros(a.shape[:2], bool)
    for k in range(4):
        p, nxt, prv = ring[k], ring[(k + 1) % 4], ring[k - 1]
        e1, e2 = nxt - p, prv - p
        bad |= _cross(e1[..., 0], e1[..., 1], e2[..., 0], e2[..., 1]) <= 0
    if bad.any():
        r, col = np.argwhere(bad)[0]
        raise DegenerateQuad((int(r), int(col)))


def _inverse_bilinear(px, py, a, b, c, d):
    """Solve ``p = a + u e + v f + u v g`` for ``(u, v)``; corner arrays are ``(K, 2)``."""
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    fx, fy = d[:, 0] - a[:, 0], d[:, 1] - a[:, 1]
    gx = a[:, 0] - b[:, 0] + c[:, 0] - d[:, 0]
    gy = a[:, 1] - b[:, 1] + c[:, 1] - d[:, 1]
    hx, hy = px - a[:, 0], py - a[:, 1]
    k2 = _cross(gx, gy, fx, fy)
    k1 = _cross(ex, ey, fx, fy) + _cross(hx, hy, gx, gy)
    k0 = _cross(hx, hy, ex, ey)
    disc = np.sqrt(np.maximum(k1 * k1 - 4.0 * k0 * k2, 0.0))
    # stable quadratic roots; k0 / q tends to the linear solution as k2 -> 0
    q = -0.5 * (k1 + np.where(k1 >= 0, disc, -disc))
    with np.errstate(divide="ignore", invalid="ignore"):
        v1 = k0 / q
        v2 = np.where(k2 != 0, q / k2, np.inf)

    def u_of(v):
        with np.errstate(divide="ignore", invalid="ignore"):
            nx, ny = ex + gx * v, ey + gy * v
            use_x = np.abs(nx) >= np.abs(ny)
            return np.where(use_x, (hx - fx * v) / nx, (hy - fy * v) / ny)

    u1, u2 = u_of(v1), u_of(v2)

    def outside(u, v):
        with np.errstate(invalid="ignore"):
            o = np.maximum(np.maximum(-u, u - 1), np.maximum(-v, v - 1))
        return np.where(np.isfinite(o), o, np.inf)

    pick2 = outside(u2, v2) < outside(u1, v1)
    return np.where(pick2, u2, u1), np.where(pick2, v2, v1)


def warp_frame(frame, wm: WarpMap, canvas_size, offset=(0, 0)):
    """Render ``frame`` after moving each vertex ``v`` to ``v + offset + displacement``.

    Each destination pixel is traced back through the inverse bilinear map
    of the warped cell covering it and sampled bilinearly.
    """
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    if tuple(wm.grid.frame_size) != (w, h):
        raise GridMismatch(f"mesh built for {wm.grid.frame_size}, frame is {(w, h)}")
    W, H = int(canvas_size[0]), int(canvas_size[1])
    V = wm.grid.vertices
    P = V + np.asarray(offset, dtype=float) + wm.displacement
    _check_quads(P)

    m, n = wm.grid.cells
    labels = np.full((H, W), -1, np.int32)
    shift = 8
    scale = float(1 << shift)
    for r in range(m):
        for c in range(n):
            quad = np.array([P[r, c], P[r, c + 1], P[r + 1, c + 1], P[r + 1, c]])
            pts = np.rint(quad * scale).astype(np.int32)
            cv2.fillConvexPoly(labels, pts, r * n + c, lineType=cv2.LINE_8, shift=shift)

    ys, xs = np.nonzero(labels >= 0)
    lab = labels[ys, xs]
    rr, cc = lab // n, lab % n
    u, v = _inverse_bilinear(xs.astype(float), ys.astype(float),
                             P[rr, cc], P[rr, cc + 1], P[rr + 1, cc + 1], P[rr + 1, cc])
    x0, x1 = V[rr, cc, 0], V[rr, cc + 1, 0]
    y0, y1 = V[rr, cc, 1], V[rr + 1, cc, 1]
    sx = x0 + u * (x1 - x0)
    sy = y0 + v * (y1 - y0)
    ok = (np.isfinite(sx) & np.isfinite(sy)
          & (sx >= -_EDGE_EPS) & (sx <= w - 1 + _EDGE_EPS)
          & (sy >= -_EDGE_EPS) & (sy <= h - 1 + _EDGE_EPS))

    mapx = np.full((H, W), -1.0, np.float32)
    mapy = np.full((H, W), -1.0, np.float32)
    mapx[ys[ok], xs[ok]] = np.clip(sx[ok], 0, w - 1)
    mapy[ys[ok], xs[ok]] = np.clip(sy[ok], 0, h - 1)
    mask = np.zeros((H, W), bool)
    mask[ys[ok], xs[ok]] = True
    return _sample(frame, mapx, mapy, mask)


def _sample(frame, mapx, mapy, mask):
    out = cv2.remap(frame, mapx, mapy, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    out = out.astype(np.float32)
    if out.ndim == 2:
        out = out[..., None]
    out[~mask] = 0.0
    return Canvas(out, mask)


def warp_homography(frame, H, canvas_size):
    """Direct projective warp (frame coordinates to canvas coordinates)."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    W, Hc = int(canvas_size[0]), int(canvas_size[1])
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], float)
    depth = corners @ H[2, :2] + H[2, 2]
    if np.any(depth <= 1e-12 * np.abs(H).max()):
        raise AtInfinity("static homography sends part of the frame through infinity")
    Hi = np.linalg.inv(H)
    # scale the inverse so points in front of the camera have positive depth
    cx, cy = apply_homography(H, ((w - 1) / 2.0, (h - 1) / 2.0))
    if Hi[2] @ [cx, cy, 1.0] < 0:
        Hi = -Hi
    gx, gy = np.meshgrid(np.arange(W, dtype=float), np.arange(Hc, dtype=float))
    den = Hi[2, 0] * gx + Hi[2, 1] * gy + Hi[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (Hi[0, 0] * gx + Hi[0, 1] * gy + Hi[0, 2]) / den
        sy = (Hi[1, 0] * gx + Hi[1, 1] * gy + Hi[1, 2]) / den
    mask = (np.isfinite(sx) & np.isfinite(sy) & (den > 0)
            & (sx >= -_EDGE_EPS) & (sx <= w - 1 + _EDGE_EPS)
            & (sy >= -_EDGE_EPS) & (sy <= h - 1 + _EDGE_EPS))
    mapx = np.where(mask, np.clip(sx, 0, w - 1), -1).astype(np.float32)
    mapy = np.where(mask, np.clip(sy, 0, h - 1), -1).astype(np.float32)
    return _sample(frame, mapx, mapy, mask)


def compose_precalibrated(frames, statics, canvas_size, mode="feather", levels=4):
    """Place every frame on one canvas through its static homography and blend."""
    if len(frames) != len(statics):
        raise ShapeMismatch(f"{len(frames)} frames but {len(statics)} homographies")
    canvases = [warp_homography(f, np.asarray(H, float), canvas_size) for f, H in zip(frames, statics)]
    return blend(canvases, mode, levels)


def _feather_weights(mask):
    m = np.pad(mask.astype(np.uint8), 1)  # the canvas edge counts as a border
    return cv2.distanceTransform(m, cv2.DIST_L2, 5)[1:-1, 1:-1].astype(np.float64)


def _normalized_sum(images, weights, mask):
    tot = np.zeros(images[0].shape, np.float64)
    wsum = np.zeros(images[0].shape[:2], np.float64)
    for img, w in zip(images, weights):
        tot += img * w[..., None]
        wsum += w
    out = np.zeros_like(tot)
    good = wsum > 0
    out[good] = tot[good] / wsum[good][:, None]
    out[~mask] = 0.0
    return out


def _push_pull(img, mask):
    """Fill invalid pixels with a smooth extension of the valid ones."""
    if mask.all() or not mask.any():
        return img.copy()
    levels = [(img * mask[..., None], mask.astype(np.float64))]
    while min(levels[-1][1].shape) > 1:
        im, wt = levels[-1]
        levels.append((_down(im), _down(wt[..., None])[..., 0]))
    im, wt = levels[-1]
    filled = np.where(wt[..., None] > 0, im / np.maximum(wt[..., None], 1e-12), 0.0)
    for im, wt in reversed(levels[:-1]):
        up = _up(filled, im.shape[:2])
        norm = np.where(wt[..., None] > 0, im / np.maximum(wt[..., None], 1e-12), up)
        a = np.clip(wt, 0, 1)[..., None]
        filled = a * norm + (1 - a) * up
    out = img.copy()
    out[~mask] = filled[~mask]
    return out


def _down(x):
    y = cv2.pyrDown(x)
    return y if y.ndim == 3 else y[..., None]


def _up(x, shape):
    y = cv2.pyrUp(x, dstsize=(shape[1], shape[0]))
    return y if y.ndim == 3 else y[..., None]


def blend(canvases, mode="feather", levels=4):
    """Merge canvases of equal size.

    ``feather`` weighs each canvas by distance to its invalid border.
    ``multiband`` blends a Laplacian pyramid of ``levels`` levels: fine bands
    follow the smoothed winner-take-all selection, the coarsest band uses the
    feather weights.
    """
    if not canvases:
        raise EmptyInput("nothing to blend")
    size = canvases[0].image.shape
    for cv in canvases:
        if cv.image.shape != size:
            raise SizeMismatch(f"canvas sizes differ: {size} vs {cv.image.shape}")
    if len(canvases) == 1:
        return canvases[0]
    mask = np.any([cv.mask for cv in canvases], axis=0)
    feather = [_feather_weights(cv.mask) for cv in canvases]
    images = [cv.image.astype(np.float64) for cv in canvases]

    if mode == "feather":
        out = _normalized_sum(images, feather, mask)
    elif mode == "multiband":
        base = _push_pull(_normalized_sum(images, feather, mask), mask)
        out = _multiband(images, [cv.mask for cv in canvases], feather, mask, levels, base)
    else:
        raise ValueError(f"unknown blend mode {mode!r}")
    return Canvas(out.astype(np.float32), mask)


def _multiband(images, masks, feather, mask, levels, base):
    levels = max(1, int(levels))
    winner = np.argmax(np.stack(feather), axis=0)
    out_pyr = None
    wsum_pyr = None
    for k, (img, m) in enumerate(zip(images, masks)):
        # hidden pixels borrow the feather composite so agreeing inputs give equal bands
        filled = np.where(m[..., None], img, base)
        gauss = [filled]
        for _ in range(levels - 1):
            gauss.append(_down(gauss[-1]))
        lap = [gauss[i] - _up(gauss[i + 1], gauss[i].shape[:2]) for i in range(levels - 1)] + [gauss[-1]]
        sel = ((winner == k) & m).astype(np.float64)
        wts = [sel]
        for _ in range(levels - 1):
            wts.append(_down(wts[-1][..., None])[..., 0])
        coarse = feather[k]
        for _ in range(levels - 1):
            coarse = _down(coarse[..., None])[..., 0]
        wts[-1] = coarse
        if out_pyr is None:
            out_pyr = [np.zeros_like(b) for b in lap]
            wsum_pyr = [np.zeros(b.shape[:2]) for b in lap]
        for i in range(levels):
            out_pyr[i] += lap[i] * wts[i][..., None]
            wsum_pyr[i] += wts[i]
    bands = [np.where(ws[..., None] > 1e-12, o / np.maximum(ws[..., None], 1e-12), 0.0)
             for o, ws in zip(out_pyr, wsum_pyr)]
    res = bands[-1]
    for i in range(levels - 2, -1, -1):
        res = _up(res, bands[i].shape[:2]) + bands[i]
    res[~mask] = 0.0
    return np.clip(res, 0.0, 255.0)
