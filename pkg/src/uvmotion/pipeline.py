"""Batch orchestration: config loading and the five processing stages.

1. optional static pre-calibration onto the canvas
2. intra and inter matching with robust outlier rejection
3. per-vertex motion fields (intra, inter and their unified sum)
4. joint optimization of smoothed trajectories and stitching profiles
5. mesh warping and blending into panorama frames

Everything random is seeded from ``PipelineConfig.seed`` and per-frame work
is collected in frame order, so the thread count never changes the output.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, DataError, NoConsensus, NumericalError, TooFewPairs, TooShort
from .frames import frame_name, read_sequence, write_frame
from .geometry import RobustConfig, invert
from .matching import MatchSet, MatcherConfig, detect_and_match, load_matches, reject_outliers
from .metrics import crop_and_distortion, stability, stitching_score, write_metrics_json
from .motionfield import (
    MeshGrid,
    MotionField,
    PropagationConfig,
    inter_field,
    intra_field,
    unified_field,
    write_fields_csv,
    zero_field,
)
from .optimizer import JointSolution, OptimizerConfig, smooth_trajectories, unified_optimize, write_energy_csv
from .profiles import accumulate_trajectories, collect_stitch_profiles, write_profiles_csv
from .warp import blend, build_warp_maps, warp_frame, warp_homography

log = logging.getLogger(__name__)

MAX_FAILURE_SHARE = 0.10
BLEND_MODES = ("feather", "multiband")


@dataclass(frozen=True)
class PipelineConfig:
    inputs: tuple  # one image-sequence directory per camera
    statics: tuple | None = None  # one 3x3 frame -> canvas homography per camera
    matcher: MatcherConfig = MatcherConfig()
    robust: RobustConfig = RobustConfig()
    propagation: PropagationConfig = PropagationConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    mesh: tuple = (16, 16)
    blend: str = "feather"
    blend_levels: int = 4
    canvas_size: tuple | None = None
    offsets: tuple | None = None  # integer (x, y) per camera
    stitch_share: float = 0.5  # part of the inter motion carried by camera A
    match_files: dict | None = None  # {"intra": [path per camera], "inter": path}
    output: str | None = None
    seed: int = 0
    write_fields: bool = False
    figures: bool = True
    metrics: bool = True


_SECTIONS = {"matcher": MatcherConfig, "robust": RobustConfig,
             "propagation": PropagationConfig, "optimizer": OptimizerConfig}


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def _section(cls, name, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
    try:
        return cls(**{k: _tuplify(v) for k, v in d.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_dict(doc, base_dir="."):
    """Build and validate a :class:`PipelineConfig`; relative paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if "inputs" not in doc:
        raise ConfigError("config needs 'inputs'")
    kw = {}
    for k, v in doc.items():
        if k in _SECTIONS:
            kw[k] = _section(_SECTIONS[k], k, v)
        elif k == "match_files":
            kw[k] = v
        else:
            kw[k] = _tuplify(v)

    def resolve(p):
        if not isinstance(p, str):
            raise ConfigError(f"expected a path string, got {p!r}")
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))

    inputs = kw["inputs"]
    if isinstance(inputs, str):
        inputs = (inputs,)
    if not inputs:
        raise ConfigError("'inputs' is empty")
    kw["inputs"] = tuple(resolve(p) for p in inputs)
    for p in kw["inputs"]:
        if not os.path.isdir(p):
            raise ConfigError(f"input directory does not exist: {p}")
    if kw.get("output") is not None:
        kw["output"] = resolve(kw["output"])
    mf = kw.get("match_files")
    if mf is not None:
        if not isinstance(mf, dict) or set(mf) - {"intra", "inter"}:
            raise ConfigError("match_files takes the keys 'intra' and 'inter'")
        out = {}
        if "intra" in mf:
            if len(mf["intra"]) != len(inputs):
                raise ConfigError("match_files.intra needs one file per camera")
            out["intra"] = [resolve(p) for p in mf["intra"]]
        if "inter" in mf:
            out["inter"] = resolve(mf["inter"])
        for p in out.get("intra", []) + ([out["inter"]] if "inter" in out else []):
            if not os.path.isfile(p):
                raise ConfigError(f"match file does not exist: {p}")
        kw["match_files"] = out

    cfg = PipelineConfig(**kw)
    n = len(cfg.inputs)
    if cfg.blend not in BLEND_MODES:
        raise ConfigError(f"blend must be one of {BLEND_MODES}, got {cfg.blend!r}")
    if not 1 <= cfg.blend_levels <= 8:
        raise ConfigError("blend_levels must lie in 1..8")
    if not 0.0 <= cfg.stitch_share <= 1.0:
        raise ConfigError("stitch_share must lie in [0, 1]")
    if len(cfg.mesh) != 2 or min(cfg.mesh) < 1:
        raise ConfigError("mesh must be [rows, cols] with positive entries")
    if cfg.statics is not None:
        H = np.asarray(cfg.statics, float)
        if H.shape != (n, 3, 3) or not np.isfinite(H).all():
            raise ConfigError(f"statics must hold {n} finite 3x3 matrices")
        if cfg.canvas_size is None:
            raise ConfigError("statics need an explicit canvas_size")
    if cfg.offsets is not None:
        off = np.asarray(cfg.offsets)
        if off.shape != (n, 2) or not np.all(off == np.rint(off)):
            raise ConfigError(f"offsets must hold {n} integer [x, y] pairs")
        if cfg.statics is not None:
            raise ConfigError("offsets and statics are mutually exclusive")
    if cfg.canvas_size is not None and (len(cfg.canvas_size) != 2 or min(cfg.canvas_size) < 1):
        raise ConfigError("canvas_size must be [w, h] with positive entries")
    if n > 2:
        raise ConfigError(f"at most two cameras are supported, got {n}")
    if n == 2 and cfg.statics is None and (cfg.offsets is None or cfg.canvas_size is None):
        raise ConfigError("two cameras need canvas_size and offsets (or statics)")
    return cfg


def load_config(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(doc, os.path.dirname(os.path.abspath(path)))


def config_to_dict(cfg: PipelineConfig):
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if hasattr(v, "__dataclass_fields__"):
            return {f.name: plain(getattr(v, f.name)) for f in fields(v)}
        return v
    return plain(cfg)


# --- helpers -----------------------------------------------------------------

def task_seed(seed, *keys):
    """Independent, reproducible seed for one unit of work."""
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _scaled(f: MotionField, s):
    return MotionField(f.grid, f.kind, f.frame_index, s * f.vectors)


def _place(frame, offset, canvas_size):
    W, H = canvas_size
    out = np.zeros((H, W) + frame.shape[2:], frame.dtype)
    x, y = int(offset[0]), int(offset[1])
    h, w = frame.shape[:2]
    out[y:y + h, x:x + w] = frame
    return out


@dataclass
class Stream:
    """Frames of one camera as seen by stages 2 to 5."""

    frames: list
    offset: tuple
    valid: list | None = None  # per-frame masks after static pre-calibration

    @property
    def frame_size(self):
        h, w = self.frames[0].shape[:2]
        return w, h


@dataclass
class StageResult:
    streams: list
    canvas_size: tuple
    grids: list
    intra_fields: list  # per camera, N fields (frame 0 is zero)
    inter_fields: list  # per camera, N fields (empty for a single camera)
    inter_matches: list  # canvas coordinate inlier sets, one per frame
    failures: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def prepare_streams(cfg: PipelineConfig):
    """Stage 1: read sequences, apply static pre-calibration or place at offsets."""
    seqs = [read_sequence(p) for p in cfg.inputs]
    n = len(seqs[0])
    for p, s in zip(cfg.inputs, seqs):
        if len(s) != n:
            raise DataError(f"{p} holds {len(s)} frames, expected {n}")
        if len(s) < 2:
            raise TooShort(f"{p}: need at least 2 frames, got {len(s)}")
    if cfg.statics is not None:
        size = tuple(int(v) for v in cfg.canvas_size)
        streams = []
        for seq, H in zip(seqs, np.asarray(cfg.statics, float)):
            cvs = [warp_homography(f, H, size) for f in seq]
            streams.append(Stream([c.to_uint8() for c in cvs], (0, 0), [c.mask for c in cvs]))
        return streams, size
    h, w = seqs[0][0].shape[:2]
    if len(seqs) > 1 and any(s[0].shape != seqs[0][0].shape for s in seqs):
        raise DataError("cameras differ in frame size")
    offsets = cfg.offsets or ((0, 0),)
    size = tuple(int(v) for v in cfg.canvas_size) if cfg.canvas_size else (w, h)
    for o in offsets:
        if o[0] < 0 or o[1] < 0 or o[0] + w > size[0] or o[1] + h > size[1]:
            raise ConfigError(f"camera at offset {tuple(o)} does not fit the {size[0]}x{size[1]} canvas")
    return [Stream(s, tuple(int(v) for v in o)) for s, o in zip(seqs, offsets)], size


def _overlap_roi(streams, canvas_size):
    masks = []
    for s in streams:
        m = np.zeros(canvas_size[::-1], bool)
        if s.valid is not None:
            m |= s.valid[0]
        else:
            w, h = s.frame_size
            m[s.offset[1]:s.offset[1] + h, s.offset[0]:s.offset[0] + w] = True
        masks.append(m)
    ys, xs = np.nonzero(masks[0] & masks[1])
    if len(xs) == 0:
        raise ConfigError("the two cameras do not overlap on the canvas")
    return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


def _robust(ms, cfg, seed):
    """Inliers and model, or ``None`` when no model can be found."""
    try:
        return reject_outliers(ms, cfg.robust, seed=seed)
    except (NoConsensus, TooFewPairs, NumericalError) as exc:
        log.info("%s frame %d camera %d: %s", ms.kind, ms.frame_index, ms.camera, exc)
        return None


def _check_failures(kind, failed, total):
    if total and len(failed) > MAX_FAILURE_SHARE * total:
        raise NoConsensus(f"{kind} model estimation failed on {len(failed)} of {total} frame pairs "
                          f"(frames {failed[:10]})")


def intra_stage(stream: Stream, camera, grid, cfg, threads=1, matches=None):
    """Intra fields for frames 0..N-1 (frame 0 has zero motion) and failed frames."""
    n = len(stream.frames)

    def one(i):
        if matches is not None:
            ms = matches.get(i, MatchSet("intra", i, camera, [], [], frame_size=stream.frame_size))
        else:
            ms = detect_and_match(stream.frames[i - 1], stream.frames[i], cfg=cfg.matcher,
                                  kind="intra", frame_index=i, camera=camera)
        return ms, _robust(ms, cfg, task_seed(cfg.seed, 1, camera, i))

    results = _map(one, range(1, n), threads)
    fields_, failed = [zero_field(grid, "intra", 0)], []
    for i, (ms, fit) in zip(range(1, n), results):
        if fit is None:
            failed.append(i)
            fields_.append(zero_field(grid, "intra", i))
            continue
        inl, H = fit
        fields_.append(intra_field(inl, grid, H, i, cfg.propagation))
    return fields_, failed


def inter_stage(streams, canvas_size, grids, cfg, threads=1, matches=None):
    """Inter fields per camera plus the canvas-coordinate inlier sets per frame."""
    a, b = streams
    n = len(a.frames)
    roi = _overlap_roi(streams, canvas_size)

    def one(i):
        if matches is not None:
            ms = matches.get(i, MatchSet("inter", i, 0, [], [], partner=1, frame_size=canvas_size))
        else:
            pa = a.frames[i] if a.valid is not None else _place(a.frames[i], a.offset, canvas_size)
            pb = b.frames[i] if b.valid is not None else _place(b.frames[i], b.offset, canvas_size)
            ms = detect_and_match(pa, pb, roi=roi, cfg=cfg.matcher, kind="inter",
                                  frame_index=i, camera=0, partner=1)
        return ms, _robust(ms, cfg, task_seed(cfg.seed, 2, 0, i))

    results = _map(one, range(n), threads)
    s = cfg.stitch_share
    fa, fb, kept, failed = [], [], [], []
    H_prev = np.eye(3)
    for i, (ms, fit) in enumerate(results):
        if fit is None:
            failed.append(i)
            inl, H = ms.subset(np.zeros(len(ms), bool)), H_prev
        else:
            inl, H = fit
        H_prev = H
        fa.append(_scaled(inter_field(inl, grids[0], H, i, cfg.propagation, origin=a.offset), s))
        fb.append(_scaled(inter_field(inl.reversed(), grids[1], invert(H), i, cfg.propagation,
                                      origin=b.offset), 1.0 - s))
        kept.append(inl)
    return [fa, fb], kept, failed


def _load_match_files(cfg):
    mf = cfg.match_files or {}
    intra = None
    if "intra" in mf:
        intra = [{m.frame_index: m for m in load_matches(p, kind="intra")} for p in mf["intra"]]
    inter = None
    if "inter" in mf:
        inter = {m.frame_index: m for m in load_matches(mf["inter"], kind="inter")}
    return intra, inter


def motion_stages(cfg: PipelineConfig, threads=1, streams=None, canvas_size=None):
    """Stages 1 to 3."""
    t0 = time.perf_counter()
    if streams is None:
        streams, canvas_size = prepare_streams(cfg)
    grids = [MeshGrid(s.frame_size, tuple(cfg.mesh)) for s in streams]
    intra_files, inter_file = _load_match_files(cfg)
    t1 = time.perf_counter()
    intra_all, failures = [], {}
    for c, s in enumerate(streams):
        f, failed = intra_stage(s, c, grids[c], cfg, threads, intra_files[c] if intra_files else None)
        intra_all.append(f)
        failures[f"intra_cam{c}"] = failed
        _check_failures(f"camera {c} intra", failed, len(s.frames) - 1)
    inter_all, kept = [[] for _ in streams], []
    if len(streams) == 2:
        inter_all, kept, failed = inter_stage(streams, canvas_size, grids, cfg, threads, inter_file)
        failures["inter"] = failed
        _check_failures("inter", failed, len(streams[0].frames))
    t2 = time.perf_counter()
    return StageResult(streams, canvas_size, grids, intra_all, inter_all, kept, failures,
                       {"load_s": t1 - t0, "motion_s": t2 - t1})


def _render_frame(streams, warps, i, canvas_size, cfg, canvases_out=None):
    canvases = []
    for s, wm in zip(streams, warps):
        frame = s.frames[i]
        if s.valid is not None:
            frame = np.dstack([frame, s.valid[i].astype(np.uint8) * 255])
        cv = warp_frame(frame, wm[i], canvas_size, offset=s.offset)
        if s.valid is not None:
            cv.mask &= cv.image[..., 3] > 127.5
            cv.image = np.ascontiguousarray(cv.image[..., :3])
            cv.image[~cv.mask] = 0.0
        canvases.append(cv)
    pano = blend(canvases, cfg.blend, cfg.blend_levels) if len(canvases) > 1 else canvases[0]
    return pano, canvases


def _camera_view(cv, stream):
    """Crop a camera's own warped canvas back to its frame footprint."""
    img = cv.to_uint8()
    if stream.valid is not None:
        return img
    x, y = stream.offset
    w, h = stream.frame_size
    return img[y:y + h, x:x + w]


@dataclass
class RunResult:
    solution: JointSolution
    trajectories: list
    stitches: list
    warps: list
    stages: StageResult
    metrics: dict
    panoramas: list | None = None


def output_trajectories(trajs, warps):
    """``T + W`` per camera: the content path after warping."""
    out = []
    for T, ws in zip(trajs, warps):
        out.append(T.with_series(T.series + np.stack([w.displacement for w in ws]), "smoothed"))
    return out


def run(cfg: PipelineConfig, out_dir=None, threads=1, stabilize_only=False, keep_frames=False):
    """Full pipeline (or the stabilization-only path); writes outputs when ``out_dir`` is set."""
    t_start = time.perf_counter()
    if stabilize_only and len(cfg.inputs) != 1:
        raise ConfigError(f"stabilize takes exactly one input stream, got {len(cfg.inputs)}")
    if not stabilize_only and len(cfg.inputs) != 2:
        raise ConfigError(f"pipeline takes two input streams, got {len(cfg.inputs)}")
    st = motion_stages(cfg, threads)
    n = len(st.streams[0].frames)

    t0 = time.perf_counter()
    trajs = [accumulate_trajectories(f, c) for c, f in enumerate(st.intra_fields)]
    if stabilize_only:
        smoothed = [smooth_trajectories(T, replace(cfg.optimizer, beta=0.0)) for T in trajs]
        solution = JointSolution(smoothed, [None] * len(trajs), [])
        stitches = []
    else:
        stitches = [collect_stitch_profiles(f, c) for c, f in enumerate(st.inter_fields)]
        solution = unified_optimize(trajs, stitches, cfg.optimizer)
    warps = build_warp_maps(solution, trajs, stabilize_only=stabilize_only)
    t1 = time.perf_counter()

    frames_dir = None
    if out_dir is not None:
        frames_dir = os.path.join(out_dir, "frames")
        os.makedirs(frames_dir, exist_ok=True)

    def render(i):
        pano, canvases = _render_frame(st.streams, warps, i, st.canvas_size, cfg)
        img = pano.to_uint8()
        if frames_dir is not None:
            write_frame(os.path.join(frames_dir, frame_name(i)), img)
        views = [_camera_view(cv, s) for cv, s in zip(canvases, st.streams)] if cfg.metrics else None
        return (img if keep_frames else None), views

    rendered = _map(render, range(n), threads)
    t2 = time.perf_counter()

    metrics = {"n_frames": n, "n_cameras": len(st.streams), "canvas_size": list(st.canvas_size),
               "mode": "stabilize" if stabilize_only else "pipeline"}
    out_traj = output_trajectories(trajs, warps)
    if n >= 8:
        metrics["stability"] = float(np.mean([stability(T) for T in out_traj]))
        metrics["input_stability"] = float(np.mean([stability(T) for T in trajs]))
        metrics["smoothed_stability"] = float(np.mean([stability(T) for T in solution.smoothed]))
    if cfg.metrics:
        crops, dists, per_crop, per_dist = [], [], [], []
        for c, s in enumerate(st.streams):
            views = [r[1][c] for r in rendered]
            masks = None if s.valid is None else [v.any(axis=-1) for v in views]
            cr, cp, di, dp = crop_and_distortion(s.frames, views, cfg.matcher, cfg.robust, masks)
            crops.append(cr)
            dists.append(di)
            per_crop.append(cp)
            per_dist.append(dp)
        metrics["cropping"] = float(np.mean(crops))
        metrics["distortion"] = float(np.min(dists))
        metrics["per_frame"] = {"cropping": per_crop, "distortion": per_dist}
    if not stabilize_only and any(len(m) for m in st.inter_matches):
        rep = stitching_score(st.inter_matches, warps[0], warps[1],
                              (st.streams[0].offset, st.streams[1].offset))
        metrics["stitching_score"] = rep.score
        metrics.setdefault("per_frame", {})["stitching_error"] = rep.per_frame_error
    if solution.energy_trace:
        metrics["energy_final"] = solution.energy_trace[-1]
        metrics["outer_rounds"] = len(solution.energy_trace) - 1
    metrics["failures"] = st.failures
    t3 = time.perf_counter()
    metrics["runtime"] = {**st.timings, "optimize_s": t1 - t0, "render_s": t2 - t1,
                          "metrics_s": t3 - t2, "total_s": t3 - t_start,
                          "per_frame_s": (t2 - t_start) / n}

    result = RunResult(solution, trajs, stitches, warps, st, metrics,
                       [r[0] for r in rendered] if keep_frames else None)
    if out_dir is not None:
        write_outputs(out_dir, cfg, result)
    return result


def write_outputs(out_dir, cfg, result: RunResult):
    os.makedirs(out_dir, exist_ok=True)
    # wall-clock timings differ between runs; keep them out of the report so reruns compare equal
    report = {k: v for k, v in result.metrics.items() if k != "runtime"}
    write_metrics_json(os.path.join(out_dir, "metrics.json"), report)
    write_metrics_json(os.path.join(out_dir, "timing.json"), result.metrics["runtime"])
    sets = list(result.trajectories) + list(result.stitches)
    sets += list(result.solution.smoothed) + [v for v in result.solution.stitch if v is not None]
    write_profiles_csv(os.path.join(out_dir, "trajectories.csv"), sets)
    write_energy_csv(os.path.join(out_dir, "energy.csv"), result.solution.energy_trace)
    if cfg.write_fields:
        st = result.stages
        all_fields = []
        for c in range(len(st.streams)):
            all_fields += st.intra_fields[c]
            if st.inter_fields[c]:
                all_fields += st.inter_fields[c]
                all_fields += [unified_field(a, b) for a, b in zip(st.intra_fields[c], st.inter_fields[c])]
        write_fields_csv(os.path.join(out_dir, "fields.csv"), all_fields)
    if cfg.figures:
        from .plotting import write_figures
        write_figures(os.path.join(out_dir, "figures"), result)


# --- sequence evaluation (metrics subcommand) ---------------------------------

def estimate_trajectories(frames, cfg: PipelineConfig, threads=1):
    """Accumulated vertex trajectory of an image sequence, as stage 2 and 3 compute it."""
    stream = Stream(list(frames), (0, 0))
    grid = MeshGrid(stream.frame_size, tuple(cfg.mesh))
    f, _ = intra_stage(stream, 0, grid, cfg, threads)
    return accumulate_trajectories(f, 0)


def evaluate_sequences(inputs, outputs, cfg: PipelineConfig, threads=1):
    """Metrics comparing an output sequence with its input sequence."""
    if len(inputs) != len(outputs):
        raise DataError(f"{len(inputs)} input frames but {len(outputs)} output frames")
    if inputs[0].shape != outputs[0].shape:
        raise DataError(f"input frames are {inputs[0].shape}, output frames {outputs[0].shape}")
    crop, cp, dist, dp = crop_and_distortion(inputs, outputs, cfg.matcher, cfg.robust)
    m = {"n_frames": len(inputs), "cropping": crop, "distortion": dist,
         "per_frame": {"cropping": cp, "distortion": dp}}
    if len(inputs) >= 8:
        m["input_stability"] = stability(estimate_trajectories(inputs, cfg, threads))
        m["stability"] = stability(estimate_trajectories(outputs, cfg, threads))
    return m


def pipeline_config_for_rig(spec, rig_dir, output="out"):
    """Config dict that runs the pipeline on a rig written by :func:`uvmotion.synth.write_rig`."""
    return {"inputs": ["cam0", "cam1"], "canvas_size": list(spec.canvas_size),
            "offsets": [[0, 0], [spec.baseline, 0]], "output": output, "seed": 0}
