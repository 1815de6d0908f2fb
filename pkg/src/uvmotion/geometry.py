"""Planar homographies: linear and robust estimation, point mapping.

Homographies are plain ``(3, 3)`` float arrays scaled so ``H[2, 2] == 1``
whenever that coefficient is nonzero. Point sets are ``(M, 2)`` arrays of
pixel coordinates; ``H`` maps a source point onto its destination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AtInfinity, DegenerateInput, NoConsensus

_DEPTH_EPS = 1e-12
_RANK_EPS = 1e-10


class PointPair(NamedTuple):
    src: tuple[float, float]
    dst: tuple[float, float]


@dataclass(frozen=True)
class RobustConfig:
    max_iterations: int = 2000
    inlier_threshold: float = 2.0
    confidence: float = 0.99
    irls_rounds: int = 10

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.max_iterations < 1 or self.irls_rounds < 0:
            raise ValueError("iteration counts must be non-negative")


def pairs_to_arrays(pairs):
    """Split a sequence of :class:`PointPair` (or 4-tuples) into src/dst arrays."""
    arr = np.array([(p[0][0], p[0][1], p[1][0], p[1][1]) if len(p) == 2 else tuple(p)
                    for p in pairs], dtype=float).reshape(-1, 4)
    return arr[:, :2].copy(), arr[:, 2:].copy()


def normalize(H):
    H = np.asarray(H, dtype=float)
    if abs(H[2, 2]) > _DEPTH_EPS:
        H = H / H[2, 2]
    return H


def translation(tx, ty):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def invert(H):
    return normalize(np.linalg.inv(H))


def apply_homography(H, points):
    """Map points through ``H`` with perspective division.

    Accepts a single point ``(x, y)`` or an ``(M, 2)`` array and returns the
    same shape. Raises :class:`AtInfinity` if any projective depth is below
    1e-12 in magnitude.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    x = pts @ H[:2, :2].T + H[:2, 2]
    w = pts @ H[2, :2] + H[2, 2]
    if np.any(np.abs(w) < _DEPTH_EPS):
        raise AtInfinity("point maps to the line at infinity")
    out = x / w[:, None]
    return out[0] if single else out


def reprojection_errors(H, src, dst):
    """Euclidean distance between ``H(src)`` and ``dst`` per pair (inf at zero depth)."""
    x = src @ H[:2, :2].T + H[:2, 2]
    w = src @ H[2, :2] + H[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = x / w[:, None]
        err = np.hypot(proj[:, 0] - dst[:, 0], proj[:, 1] - dst[:, 1])
    err[~np.isfinite(err)] = np.inf
    return err


def _hartley(points):
    c = points.mean(axis=0)
    d = np.sqrt(((points - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _design_rows(src, dst):
    """Two DLT rows per correspondence, shape ``(..., 2M, 9)``."""
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=-1)
    r2 = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=-1)
    rows = np.stack([r1, r2], axis=-2)
    return rows.reshape(*rows.shape[:-3], -1, 9)


def _solve_null(A):
    """Right null vector of ``A`` (``(..., R, 9)``) and its rank-deficiency margin."""
    if A.shape[-2] < 9:
        pad = np.zeros(A.shape[:-2] + (9 - A.shape[-2], 9))
        A = np.concatenate([A, pad], axis=-2)
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    # rank 8 is required for a unique solution
    margin = s[..., 7] / np.maximum(s[..., 0], np.finfo(float).tiny)
    return vt[..., -1, :], margin


def estimate_homography_dlt(src, dst, weights=None):
    """Normalized direct linear transform.

    Least-squares projective fit mapping ``src`` onto ``dst`` (both ``(M, 2)``,
    M >= 4). Optional per-pair ``weights`` scale each pair's equations, which
    is what the IRLS refinement uses.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) < 4 or len(src) != len(dst):
        raise DegenerateInput(f"need at least 4 correspondences, got {len(src)}")
    Ts, Td = _hartley(src), _hartley(dst)
    ns = src @ Ts[:2, :2].T + Ts[:2, 2]
    nd = dst @ Td[:2, :2].T + Td[:2, 2]
    A = _design_rows(ns, nd)
    if weights is not None:
        A = A * np.repeat(np.sqrt(np.asarray(weights, dtype=float)), 2)[:, None]
    h, margin = _solve_null(A)
    if margin < _RANK_EPS:
        raise DegenerateInput("rank-deficient design matrix (collinear or repeated points)")
    H = np.linalg.inv(Td) @ h.reshape(3, 3) @ Ts
    if abs(np.linalg.det(H)) < 1e-14 * np.abs(H).max() ** 3:
        raise DegenerateInput("estimated homography is singular")
    return normalize(H)


def _minimal_models(ns, nd, samples):
    """Batched 4-point DLT on normalized coordinates; returns models and a validity flag."""
    A = _design_rows(ns[samples], nd[samples])
    h, margin = _solve_null(A)
    return h.reshape(-1, 3, 3), margin > 1e-8


def _msac_cost(models, src, dst, th2):
    x = np.einsum("kij,mj->kmi", models[:, :2, :2], src) + models[:, None, :2, 2]
    w = np.einsum("kj,mj->km", models[:, 2, :2], src) + models[:, None, 2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        e2 = ((x / w[..., None] - dst[None]) ** 2).sum(-1)
    e2[~np.isfinite(e2)] = np.inf
    return np.minimum(e2, th2).sum(axis=1), e2 <= th2


def robust_homography(src, dst, cfg=RobustConfig(), seed=0):
    """MSAC sampling followed by Huber-weighted IRLS refinement.

    Random minimal samples are scored with the truncated quadratic loss
    ``sum(min(e^2, t^2))``; the sample budget adapts to the best inlier ratio
    seen so far and the requested confidence. The winning model is refined by
    iteratively reweighted DLT on its consensus set, with Huber weights of
    scale ``t / 2``. Pairs are put into a canonical order before sampling, so
    the result does not depend on the order of the input list.

    Returns ``(H, inlier_mask)`` where the mask marks pairs whose final
    reprojection error is at most ``cfg.inlier_threshold``.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    M = len(src)
    if M < 4:
        raise DegenerateInput(f"need at least 4 correspondences, got {M}")

    order = np.lexsort((dst[:, 1], dst[:, 0], src[:, 1], src[:, 0]))
    s, d = src[order], dst[order]
    th = cfg.inlier_threshold
    th2 = th * th

    Ts, Td = _hartley(s), _hartley(d)
    ns = s @ Ts[:2, :2].T + Ts[:2, 2]
    nd = d @ Td[:2, :2].T + Td[:2, 2]
    Td_inv = np.linalg.inv(Td)

    rng = np.random.default_rng(seed)
    best_cost, best_H, best_count = np.inf, None, 0
    needed, drawn, batch = cfg.max_iterations, 0, 64
    while drawn < min(needed, cfg.max_iterations):
        k = min(batch, cfg.max_iterations - drawn)
        samples = np.stack([rng.choice(M, size=4, replace=False) for _ in range(k)])
        drawn += k
        models, ok = _minimal_models(ns, nd, samples)
        if not ok.any():
            continue
        models = Td_inv @ models[ok] @ Ts
        cost, inl = _msac_cost(models, s, d, th2)
        i = int(np.argmin(cost))
        if cost[i] < best_cost:
            best_cost, best_H = cost[i], normalize(models[i])
            best_count = int(inl[i].sum())
            ratio = best_count / M
            if ratio >= 1.0:
                needed = 0
            elif ratio > 0:
                needed = math.ceil(math.log(1 - cfg.confidence) / math.log(1 - ratio ** 4))

    if best_H is None or best_count < 4:
        raise NoConsensus(f"best model has {best_count} inliers, need at least 4")

    H = best_H
    consensus = reprojection_errors(H, s, d) <= th
    scale = 0.5 * th
    for _ in range(cfg.irls_rounds):
        e = reprojection_errors(H, s[consensus], d[consensus])
        w = np.where(e <= scale, 1.0, scale / np.maximum(e, 1e-300))
        try:
            H_new = estimate_homography_dlt(s[consensus], d[consensus], weights=w)
        except DegenerateInput:
            break
        new_consensus = reprojection_errors(H_new, s, d) <= th
        if new_consensus.sum() < 4:
            break
        converged = (np.array_equal(new_consensus, consensus)
                     and np.abs(H_new - H).max() < 1e-12 * max(1.0, np.abs(H).max()))
        H, consensus = H_new, new_consensus
        if converged:
            break

    mask = np.empty(M, dtype=bool)
    mask[order] = reprojection_errors(H, s, d) <= th
    return H, mask
