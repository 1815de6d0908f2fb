"""Command line: ``uvmotion {pipeline,stabilize,metrics,synth}``.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import cv2

from .errors import ConfigError, DataError, NumericalError, UVMotionError
from .frames import read_sequence
from .metrics import write_metrics_json
from .pipeline import PipelineConfig, evaluate_sequences, load_config, pipeline_config_for_rig, run
from .synth import RigSpec, write_rig

log = logging.getLogger("uvmotion")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _out_dir(args, cfg=None):
    out = args.out or (cfg.output if cfg is not None else None)
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'output' in the config")
    return out


def _summary(metrics):
    keys = ("n_frames", "stability", "input_stability", "cropping", "distortion", "stitching_score")
    return {k: metrics[k] for k in keys if k in metrics}


def cmd_pipeline(args, stabilize_only=False):
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    res = run(cfg, out, threads=args.threads, stabilize_only=stabilize_only)
    print(json.dumps(_summary(res.metrics), sort_keys=True))
    return EXIT_OK


def cmd_stabilize(args):
    return cmd_pipeline(args, stabilize_only=True)


def cmd_metrics(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = PipelineConfig(inputs=(args.input_dir,))
    m = evaluate_sequences(read_sequence(args.input_dir), read_sequence(args.output_dir), cfg, args.threads)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_metrics_json(os.path.join(args.out, "metrics.json"), m)
    print(json.dumps(_summary(m), sort_keys=True))
    return EXIT_OK


def cmd_synth(args):
    if args.config:
        if not os.path.isfile(args.config):
            raise ConfigError(f"rig spec not found: {args.config}")
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("rig spec must be a JSON object")
        try:
            spec = RigSpec.from_dict(doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    else:
        spec = RigSpec()
    out = _out_dir(args)
    write_rig(out, spec)
    pipe = pipeline_config_for_rig(spec, out)
    stab = {"inputs": ["cam0"], "output": "out_stabilize", "seed": 0}
    for name, doc in (("pipeline.json", pipe), ("stabilize.json", stab)):
        with open(os.path.join(out, name), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(json.dumps({"out": out, "n_frames": spec.n_frames, "canvas_size": list(spec.canvas_size)}))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="uvmotion",
                                description="Joint video stabilization and stitching on mesh-vertex motion.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (rig spec for synth)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads (outputs do not depend on it)")
    common.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("pipeline", parents=[common], help="stabilize and stitch two streams")
    sp.set_defaults(func=cmd_pipeline, needs_config=True)
    sp = sub.add_parser("stabilize", parents=[common], help="stabilize one stream")
    sp.set_defaults(func=cmd_stabilize, needs_config=True)
    sp = sub.add_parser("metrics", parents=[common], help="compare an output sequence with its input")
    sp.add_argument("input_dir")
    sp.add_argument("output_dir")
    sp.set_defaults(func=cmd_metrics, needs_config=False)
    sp = sub.add_parser("synth", parents=[common], help="write a synthetic two-camera rig")
    sp.set_defaults(func=cmd_synth, needs_config=False)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.needs_config and not args.config:
            raise ConfigError(f"{args.command} needs --config")
        cv2.setNumThreads(args.threads)
        return args.func(args)
    except ConfigError as exc:
        print(f"uvmotion: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"uvmotion: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"uvmotion: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UVMotionError as exc:  # pragma: no cover - every error has a family
        print(f"uvmotion: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
