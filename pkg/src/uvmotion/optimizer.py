"""Trajectory smoothing and the alternating stabilize/stitch solver.

Every vertex and every coordinate is an independent quadratic problem over
the frame axis, so all of them are solved together as columns of an
``(N, K)`` matrix. The smoothness term sums over ordered frame pairs
``(i, j)`` with ``0 < |i - j| <= sigma``; each unordered pair therefore
appears twice, which is where the factor ``2 * lambda_t`` in the Jacobi
updates comes from.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteEnergy, ShapeMismatch
from .profiles import VertexProfileSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    sigma: int = 15
    lambda_t: float = 100.0
    beta: float = 10.0
    jacobi_iters: int = 20
    outer_iters: int = 20
    tol: float = 1e-3

    def __post_init__(self):
        if self.sigma < 1:
            raise ValueError("sigma must be >= 1")
        if self.lambda_t < 0 or self.beta < 0:
            raise ValueError("lambda_t and beta must be non-negative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.jacobi_iters < 1 or self.outer_iters < 0:
            raise ValueError("iteration counts must be positive")


@dataclass
class JointSolution:
    smoothed: list  # T-hat per camera
    stitch: list  # V-hat per camera
    energy_trace: list = field(default_factory=list)


def gaussian_weight(i, j, sigma):
    return math.exp(-((j - i) ** 2) / (sigma / 3.0) ** 2)


def window_weights(sigma, n):
    """Weights for frame offsets ``1..min(sigma, n - 1)``."""
    return [(k, gaussian_weight(0, k, sigma)) for k in range(1, min(int(sigma), n - 1) + 1)]


def _neighbour_pull(x, weights):
    """``sum_j w_ij (x_j - x_i)`` over the clipped window, from exact differences."""
    out = np.zeros_like(x)
    for k, w in weights:
        d = x[k:] - x[:-k]
        out[:-k] += w * d
        out[k:] -= w * d
    return out


def _dense_pull(n, weights):
    """Same sum as :func:`_neighbour_pull` through one pairwise-difference product.

    Cheaper per sweep for short series; differences keep constants exact.
    """
    Wm = np.zeros((n, n))
    for k, w in weights:
        Wm[np.arange(n - k), np.arange(k, n)] = w
        Wm[np.arange(k, n), np.arange(n - k)] = w
    return lambda x: np.einsum("ij,ijk->ik", Wm, x[None, :, :] - x[:, None, :])


DENSE_PULL_LIMIT = 1 << 16  # n * n * columns


def _degree(n, weights):
    d = np.zeros(n)
    for k, w in weights:
        d[:-k] += w
        d[k:] += w
    return d


def _columns(ps):
    """``(N, K)`` view of a profile series, one column per vertex coordinate."""
    return ps.series.reshape(ps.series.shape[0], -1)


def _check_same(*sets):
    shape = sets[0].series.shape
    for s in sets[1:]:
        if s.series.shape != shape:
            raise ShapeMismatch(f"profile shapes differ: {shape} vs {s.series.shape}")


def _stable_energy(x, t, weights, lam):
    data = float(((x - t) ** 2).sum())
    # ordered pairs: every unordered pair counts twice
    smooth = sum(2.0 * w * float(((x[k:] - x[:-k]) ** 2).sum()) for k, w in weights)
    return data + lam * smooth


def stabilization_energy(smoothed: VertexProfileSet, traj: VertexProfileSet, cfg: OptimizerConfig):
    _check_same(smoothed, traj)
    wts = window_weights(cfg.sigma, traj.n_frames)
    return _stable_energy(_columns(smoothed), _columns(traj), wts, cfg.lambda_t)


def _jacobi(t, weights, lam, iters, tol, beta=0.0, target=None):
    """Jacobi sweeps from ``x = t``.

    Written as ``x + residual / diagonal``, which is algebraically the usual
    ``(t + beta T* + 2 lam sum w x_j) / (1 + beta + 2 lam sum w)`` but keeps
    exact fixed points (constant series) bit-exact.
    """
    n = len(t)
    denom = (1.0 + beta + 2.0 * lam * _degree(n, weights))[:, None]
    if n * n * t.shape[1] <= DENSE_PULL_LIMIT:
        pull = _dense_pull(n, weights)
    else:
        def pull(x):
            return _neighbour_pull(x, weights)
    x = t.copy()
    for _ in range(iters):
        r = (t - x) + 2.0 * lam * pull(x)
        if target is not None and beta:
            r += beta * (target - x)
        step = r / denom
        x = x + step
        if (np.abs(step).max() if x.size else 0.0) < tol:
            break
    return x


def smooth_trajectories(traj: VertexProfileSet, cfg: OptimizerConfig):
    wts = window_weights(cfg.sigma, traj.n_frames)
    x = _jacobi(_columns(traj), wts, cfg.lambda_t, cfg.jacobi_iters, cfg.tol)
    return traj.with_series(x.reshape(traj.series.shape), "smoothed")


def solve_stitch_profiles(stitch: VertexProfileSet, smoothed: VertexProfileSet, traj: VertexProfileSet):
    """Closed-form ``V-hat = V - (T-hat - T)``."""
    _check_same(stitch, smoothed, traj)
    return stitch.with_series(stitch.series - (smoothed.series - traj.series), "optimized-stitching")


def temporary_target(opt_stitch: VertexProfileSet, stitch: VertexProfileSet, traj: VertexProfileSet):
    """``T* = T + V - V-hat``, the minimizer of the stitching term over T-hat."""
    _check_same(opt_stitch, stitch, traj)
    return traj.with_series(traj.series + (stitch.series - opt_stitch.series), "smoothed")


def update_smoothed(traj: VertexProfileSet, target: VertexProfileSet, cfg: OptimizerConfig):
    """Minimize the stabilization energy plus ``beta * |T-hat - T*|^2`` by Jacobi from ``T``."""
    _check_same(traj, target)
    wts = window_weights(cfg.sigma, traj.n_frames)
    x = _jacobi(_columns(traj), wts, cfg.lambda_t, cfg.jacobi_iters, cfg.tol,
                cfg.beta, _columns(target))
    return traj.with_series(x.reshape(traj.series.shape), "smoothed")


def unified_energy(trajs, stitches, smoothed, opt_stitches, cfg):
    total = 0.0
    for T, V, Th, Vh in zip(trajs, stitches, smoothed, opt_stitches):
        wts = window_weights(cfg.sigma, T.n_frames)
        total += _stable_energy(_columns(Th), _columns(T), wts, cfg.lambda_t)
        total += cfg.beta * float(((Vh.series - V.series + Th.series - T.series) ** 2).sum())
    if not math.isfinite(total):
        raise NonFiniteEnergy(f"unified energy is {total}")
    return total


def unified_optimize(trajs, stitches, cfg: OptimizerConfig = OptimizerConfig()):
    """Alternating solve over all cameras (two in the usual rig, any number works).

    ``trajs[c]`` and ``stitches[c]`` are camera ``c``'s T and V. The trace
    holds the energy after the initial independent solve and after each
    outer round.
    """
    if len(trajs) != len(stitches) or not trajs:
        raise ShapeMismatch("need one stitching profile per trajectory")
    n = trajs[0].n_frames
    for T, V in zip(trajs, stitches):
        _check_same(T, V)
        if T.n_frames != n:
            raise ShapeMismatch("cameras disagree on frame count")

    smoothed = [smooth_trajectories(T, cfg) for T in trajs]
    opt = [solve_stitch_profiles(V, Th, T) for V, Th, T in zip(stitches, smoothed, trajs)]
    trace = [unified_energy(trajs, stitches, smoothed, opt, cfg)]
    for rnd in range(cfg.outer_iters):
        for c, (T, V) in enumerate(zip(trajs, stitches)):
            target = temporary_target(opt[c], V, T)
            smoothed[c] = update_smoothed(T, target, cfg)
            opt[c] = solve_stitch_profiles(V, smoothed[c], T)
        trace.append(unified_energy(trajs, stitches, smoothed, opt, cfg))
        log.debug("outer round %d energy %.6g", rnd + 1, trace[-1])
        if abs(trace[-2] - trace[-1]) < cfg.tol:
            break
    return JointSolution(smoothed, opt, trace)


def write_energy_csv(path, trace):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("outer_iter,energy\n")
        for k, e in enumerate(trace):
            fh.write(f"{k},{e!r}\n")
