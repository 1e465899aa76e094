"""Command-line entry points: synthesize, train, render, eval, export.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Training configuration comes from defaults, an optional JSON file (--config)
and flat --set key=value overrides, in that order.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import load_dataset, write_image
from .errors import DataError, NumericalError, UsageError
from .metrics import evaluate_model
from .modelfile import export_web, load_model, save_model
from .shading import render_rgb
from .synth import FAMILIES, PRESETS, SynthSpec, synthesize
from .training import TrainConfig, train


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _build_config(args) -> TrainConfig:
    overrides = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        try:
            overrides.update(json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise DataError(f"malformed config JSON: {e}")
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = _parse_value(value.strip())
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    lists = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    config = TrainConfig().with_overrides(lists)
    config.validate()
    return config


def cmd_synthesize(args) -> int:
    spec = SynthSpec(
        out_dir=args.out,
        cameras=args.cameras,
        width=args.width,
        height=args.height,
        frames=args.frames,
        blobs=args.blobs,
        motion_family=args.family,
        preset=args.preset,
        seed=args.seed,
    )
    out = synthesize(spec)
    print(f"wrote dataset to {out}")
    return 0


def cmd_train(args) -> int:
    config = _build_config(args)
    dataset = load_dataset(args.dataset)
    cloud, mlp, log = train(dataset, config, log_path=args.log)
    save_model(cloud, mlp, args.out, time_min=0.0, time_max=1.0)
    if log:
        last = log[-1]
        print(
            f"trained {config.iterations} iterations: loss {last['loss']:.4f}, "
            f"psnr {last['psnr']:.2f} dB, {last['count']} Gaussians -> {args.out}"
        )
    else:
        print(f"trained 0 iterations -> {args.out}")
    return 0


def cmd_render(args) -> int:
    cloud, mlp, meta = load_model(args.model)
    if args.camera_json:
        from .camera import Camera

        cam = Camera.from_dict(json.loads(Path(args.camera_json).read_text()))
        cam.validate()
    else:
        if args.dataset is None:
            raise UsageError("render needs --dataset with --camera-index, or --camera-json")
        dataset = load_dataset(args.dataset)
        if not 0 <= args.camera_index < len(dataset.cameras):
            raise UsageError(f"camera index {args.camera_index} out of range")
        cam = dataset.cameras[args.camera_index]
    t = args.t
    if t < meta.time_min or t > meta.time_max:
        clamped = min(max(t, meta.time_min), meta.time_max)
        print(
            f"warning: t={t} outside model range [{meta.time_min}, {meta.time_max}], "
            f"clamping to {clamped}",
            file=sys.stderr,
        )
        t = clamped
    rgb = render_rgb(cloud, cam, mlp, t, lite=args.lite)
    write_image(Path(args.out), rgb)
    print(f"rendered t={t} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cloud, mlp, _ = load_model(args.model)
    dataset = load_dataset(args.dataset)
    cameras = None
    if args.cameras:
        cameras = [int(c) for c in args.cameras.split(",")]
        for c in cameras:
            if not 0 <= c < len(dataset.cameras):
                raise UsageError(f"camera index {c} out of range")
    report = evaluate_model(cloud, mlp, dataset, camera_indices=cameras, lite=args.lite)
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    return 0


def cmd_export(args) -> int:
    cloud, _, meta = load_model(args.model)
    export_web(cloud, args.out, time_min=meta.time_min, time_max=meta.time_max)
    print(f"exported lite model -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stgsplat",
        description="Train, render and evaluate time-varying Gaussian splat scenes.",
    )
    p.add_argument("--threads", type=int, default=None, help="cap worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synthesize", help="generate a synthetic dataset with ground truth")
    ps.add_argument("--out", required=True)
    ps.add_argument("--cameras", type=int, default=6)
    ps.add_argument("--width", type=int, default=128)
    ps.add_argument("--height", type=int, default=128)
    ps.add_argument("--frames", type=int, default=16)
    ps.add_argument("--blobs", type=int, default=12)
    ps.add_argument("--family", choices=FAMILIES, default="mixed")
    ps.add_argument("--preset", choices=PRESETS, default="default")
    ps.add_argument("--seed", type=int, default=0)
    ps.set_defaults(func=cmd_synthesize)

    pt = sub.add_parser("train", help="optimize a model against a dataset")
    pt.add_argument("--dataset", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--config", help="JSON file of TrainConfig overrides")
    pt.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a single config field (repeatable)")
    pt.add_argument("--iterations", type=int, default=None)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--log", help="write a JSONL training log here")
    pt.set_defaults(func=cmd_train)

    pr = sub.add_parser("render", help="render one view of a trained model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--dataset")
    pr.add_argument("--camera-index", type=int, default=0)
    pr.add_argument("--camera-json", help="JSON file with explicit camera parameters")
    pr.add_argument("--t", type=float, default=0.0)
    pr.add_argument("--lite", action="store_true", help="base-color channels only")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_render)

    pe = sub.add_parser("eval", help="score a model against dataset images")
    pe.add_argument("--model", required=True)
    pe.add_argument("--dataset", required=True)
    pe.add_argument("--cameras", help="comma-separated camera indices (default: held-out)")
    pe.add_argument("--lite", action="store_true")
    pe.add_argument("--out", help="also write the report JSON here")
    pe.set_defaults(func=cmd_eval)

    px = sub.add_parser("export", help="write the lite model file the web viewer loads")
    px.add_argument("--model", required=True)
    px.add_argument("--out", required=True)
    px.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        try:
            import numba

            numba.set_num_threads(max(1, args.threads))
        except Exception:
            pass
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
