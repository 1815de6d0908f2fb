"""Synthetic two-camera rig with exact ground truth.

A procedural scene is cropped by two windows. Each window follows its own
integer random walk; camera B also drifts along a slow sinusoid, which plays
the part of relative pose change between the two camera clusters. Since
every motion is a whole-pixel translation of the crop window, all ground
truth is exact: trajectories, inter-camera homographies and point matches.

Sign conventions match the rest of the package. A window step ``d`` moves
scene content by ``-d`` inside the frame, so intra matches have
``src - dst = d`` and the accumulated content trajectory is ``-(p_i - p_0)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np

from .errors import ConfigError, TooSmall, WindowOutOfScene
from .frames import write_sequence
from .geometry import translation
from .matching import MatchSet, save_matches

MIN_SCENE = 256


def _value_noise(rng, h, w, cell):
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.random((gh, gw)).astype(np.float32)
    up = cv2.resize(grid, (gw * cell, gh * cell), interpolation=cv2.INTER_CUBIC)
    return up[:h, :w]


def generate_scene(seed, size=(1920, 1080)):
    """Deterministic RGB texture: multi-octave value noise plus random blobs."""
    w, h = int(size[0]), int(size[1])
    if w < MIN_SCENE or h < MIN_SCENE:
        raise TooSmall(f"scene must be at least {MIN_SCENE}x{MIN_SCENE}, got {w}x{h}")
    rng = np.random.default_rng(seed)

    lum = np.zeros((h, w), np.float32)
    for cell, amp in ((128, 1.0), (64, 0.8), (32, 0.7), (16, 0.6), (8, 0.5), (4, 0.4)):
        lum += amp * _value_noise(rng, h, w, cell)
    lo, hi = np.percentile(lum, (1, 99))
    lum = np.clip((lum - lo) / (hi - lo), 0, 1)

    # slow colour tint so the channels are not identical
    tint = np.stack([_value_noise(rng, h, w, 256) for _ in range(3)], -1)
    img = lum[..., None] * (0.55 + 0.45 * tint) * 255.0 + 20.0 * (tint - 0.5)
    img = np.clip(img, 0, 255).astype(np.uint8)

    n_blobs = (w * h) // 3000
    cx = rng.integers(0, w, n_blobs)
    cy = rng.integers(0, h, n_blobs)
    ax = rng.integers(3, 18, (n_blobs, 2))
    ang = rng.uniform(0, 180, n_blobs)
    dark = rng.random(n_blobs) < 0.5
    col = rng.integers(0, 70, (n_blobs, 3))
    for k in range(n_blobs):
        c = col[k] if dark[k] else 255 - col[k]
        cv2.ellipse(img, (int(cx[k]), int(cy[k])), (int(ax[k, 0]), int(ax[k, 1])), float(ang[k]),
                    0, 360, tuple(int(v) for v in c), -1, cv2.LINE_8)
    return img


@dataclass(frozen=True)
class RigSpec:
    scene_seed: int = 0
    scene_size: tuple = (1920, 1080)
    frame_size: tuple = (960, 540)
    n_frames: int = 100
    jitter_sigma: float = 4.0  # px, std of each random-walk step per axis
    articulation_amplitude: float = 0.0  # px
    overlap_fraction: float = 0.5
    articulation_period: float | None = None  # frames, default n_frames / 2
    seed: int = 0  # jitter random stream
    match_step: int = 24  # px between ground-truth match samples

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.jitter_sigma < 0 or self.articulation_amplitude < 0:
            raise ConfigError("jitter_sigma and articulation_amplitude must be non-negative")
        if not 0.0 < self.overlap_fraction < 1.0:
            raise ConfigError("overlap_fraction must lie in (0, 1)")
        if self.frame_size[0] < 32 or self.frame_size[1] < 32:
            raise ConfigError("frame_size must be at least 32x32")
        if self.match_step < 1:
            raise ConfigError("match_step must be >= 1")
        if self.articulation_period is not None and self.articulation_period <= 0:
            raise ConfigError("articulation_period must be positive")

    @property
    def baseline(self):
        """Horizontal offset of camera B from camera A, px."""
        return int(round(self.frame_size[0] * (1.0 - self.overlap_fraction)))

    @property
    def canvas_size(self):
        return self.frame_size[0] + self.baseline, self.frame_size[1]

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown rig keys: {sorted(extra)}")
        d = dict(d)
        for k in ("scene_size", "frame_size"):
            if k in d:
                d[k] = tuple(int(v) for v in d[k])
        return cls(**d)


@dataclass
class GroundTruth:
    spec: RigSpec
    windows: np.ndarray  # (2, N, 2) window top-left in scene px
    trajectories: np.ndarray  # (2, N, 2) accumulated content motion
    inter_homographies: np.ndarray  # (N, 3, 3) canvas A -> canvas B
    intra: list  # per camera, MatchSets for frames 1..N-1
    inter: list  # MatchSets A -> B in canvas coordinates
    offsets: tuple = ((0, 0), (0, 0))
    extra: dict = field(default_factory=dict)

    @property
    def canvas_size(self):
        return self.spec.canvas_size


def _walk(rng, n, sigma):
    steps = np.rint(rng.normal(0.0, sigma, (max(n - 1, 0), 2))) if sigma > 0 else np.zeros((max(n - 1, 0), 2))
    return np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)]).astype(np.int64)


def _articulation(spec):
    n = spec.n_frames
    period = spec.articulation_period or n / 2.0
    s = np.sin(2.0 * np.pi * np.arange(n) / period)
    a = spec.articulation_amplitude
    return np.rint(np.stack([a * s, 0.5 * a * s], -1)).astype(np.int64)


def _sample_grid(w, h, step):
    xs = np.arange(step // 2, w, step, dtype=float)
    ys = np.arange(step // 2, h, step, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], -1)


def _inside(p, w, h):
    return (p[:, 0] >= 0) & (p[:, 0] <= w - 1) & (p[:, 1] >= 0) & (p[:, 1] <= h - 1)


def rig_windows(spec: RigSpec):
    """Window positions ``(2, N, 2)`` and canvas offsets, validated against the scene."""
    W, H = spec.scene_size
    w, h = spec.frame_size
    b = spec.baseline
    base_a = np.array([(W - (w + b)) // 2, (H - h) // 2])
    rng = np.random.default_rng(spec.seed)
    walk_a = _walk(rng, spec.n_frames, spec.jitter_sigma)
    walk_b = _walk(rng, spec.n_frames, spec.jitter_sigma) + _articulation(spec)
    win = np.stack([base_a + walk_a, base_a + (b, 0) + walk_b])
    lo = win.min(axis=(0, 1))
    hi = win.max(axis=(0, 1)) + (w, h)
    if lo[0] < 0 or lo[1] < 0 or hi[0] > W or hi[1] > H:
        c, i = np.argwhere((win[..., 0] < 0) | (win[..., 1] < 0)
                           | (win[..., 0] + w > W) | (win[..., 1] + h > H))[0]
        raise WindowOutOfScene(f"camera {c} window leaves the {W}x{H} scene at frame {i}")
    return win, ((0, 0), (b, 0))


def generate_rig_sequence(spec: RigSpec, scene=None):
    """Render both cameras and their ground truth.

    Returns ``(frames_a, frames_b, truth)``.
    """
    win, offsets = rig_windows(spec)
    if scene is None:
        scene = generate_scene(spec.scene_seed, spec.scene_size)
    w, h = spec.frame_size
    n = spec.n_frames
    frames = [[scene[y:y + h, x:x + w].copy() for x, y in win[c]] for c in range(2)]

    traj = -(win - win[:, :1]).astype(float)
    off = np.asarray(offsets, float)
    inter_h = np.stack([translation(*(win[0, i] - win[1, i] + off[1] - off[0])) for i in range(n)])

    grid = _sample_grid(w, h, spec.match_step)
    intra = []
    for c in range(2):
        sets = []
        for i in range(1, n):
            step = (win[c, i] - win[c, i - 1]).astype(float)
            dst = grid - step
            keep = _inside(dst, w, h)
            sets.append(MatchSet("intra", i, c, grid[keep], dst[keep], frame_size=(w, h)))
        intra.append(sets)
    inter = []
    for i in range(n):
        pb = grid + (win[0, i] - win[1, i])
        keep = _inside(pb, w, h)
        inter.append(MatchSet("inter", i, 0, grid[keep] + off[0], pb[keep] + off[1], partner=1,
                              frame_size=spec.canvas_size))
    truth = GroundTruth(spec, win, traj, inter_h, intra, inter, offsets)
    return frames[0], frames[1], truth


def write_rig(out_dir, spec: RigSpec):
    """Write ``cam0/``, ``cam1/``, match files and ``ground_truth.json``; returns the truth."""
    fa, fb, gt = generate_rig_sequence(spec)
    os.makedirs(out_dir, exist_ok=True)
    write_sequence(os.path.join(out_dir, "cam0"), fa)
    write_sequence(os.path.join(out_dir, "cam1"), fb)
    files = {"intra": ["matches_intra_cam0.json", "matches_intra_cam1.json"], "inter": "matches_inter.json"}
    for c in range(2):
        save_matches(os.path.join(out_dir, files["intra"][c]), gt.intra[c], spec.frame_size, "intra")
    save_matches(os.path.join(out_dir, files["inter"]), gt.inter, spec.canvas_size, "inter")
    doc = {
        "rig": asdict(spec),
        "canvas_size": list(spec.canvas_size),
        "offsets": [list(o) for o in gt.offsets],
        "cameras": ["cam0", "cam1"],
        "windows": gt.windows.tolist(),
        "trajectories": gt.trajectories.tolist(),
        "inter_homographies": gt.inter_homographies.tolist(),
        "match_files": files,
    }
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return gt
