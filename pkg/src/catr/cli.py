"""Command-line entry points.

Subcommands: gen-data, train, eval, infer, gradcheck, bench-attn.
Exit codes: 0 success, 1 validation error, 2 numeric failure.
Env var CATR_SEED overrides the configured seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, config_to_dict, desk_preset, load_config, paper_preset
from .data import generate_dataset, read_dataset, write_dataset
from .gradsuite import THRESHOLD, run_all
from .model import CatrModel
from .perf import ResourceError, analytic_costs, measure_peak
from .serialize import FormatError
from .tensor import DimensionError, NumericError
from .train import TrainingDiverged, evaluate_model, predict_sample, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    preset = getattr(args, "preset", "desk")
    return paper_preset() if preset == "paper" else desk_preset()


def cmd_gen_data(args) -> int:
    samples = generate_dataset(args.n, seed=args.seed, frames=args.frames,
                               height=args.size, width=args.size,
                               noise_sigma=args.noise, multi_source=args.multi_source)
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.data:
        cfg.data.train_dir = args.data
    if args.steps:
        cfg.optim.steps = args.steps
    if not cfg.data.train_dir:
        raise ConfigError("no training data: pass --data or set data.train_dir in the config")
    out = Path(args.out)
    ckpt = train(cfg, out, log_every=args.log_every)
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=1))
    print(f"final checkpoint: {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = CatrModel.load(args.ckpt)
    samples = read_dataset(args.data)
    report = evaluate_model(model, samples)
    Path(args.report).write_text(report.to_json())
    print(f"M_J {report.m_j:.4f}  M_F {report.m_f:.4f}  ({len(samples)} videos) -> {args.report}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from PIL import Image

    model = CatrModel.load(args.ckpt)
    samples = read_dataset(args.data)
    if not 0 <= args.index < len(samples):
        raise ConfigError(f"sample index {args.index} out of range (dataset has {len(samples)})")
    sample = samples[args.index]
    idx, masks, _ = predict_sample(model, sample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(sample.frames):
        mask_img = (masks[t] * 255).astype(np.uint8)
        Image.fromarray(mask_img, mode="L").save(out / f"mask_{t:02d}.png")
        frame = sample.video[t]
        overlay = frame.copy()
        overlay[masks[t]] = 0.55 * frame[masks[t]] + 0.45 * np.array([1.0, 0.1, 0.1])
        Image.fromarray((np.clip(overlay, 0, 1) * 255).astype(np.uint8)).save(
            out / f"overlay_{t:02d}.png")
    print(f"selected query {idx}; wrote {sample.frames} mask + overlay frames to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_all(seed=args.seed)
    width = max(len(k) for k in results)
    failed = []
    for name, err in results.items():
        status = "ok" if err < THRESHOLD else "FAIL"
        print(f"{name:{width}s}  {err:.3e}  {status}")
        if err >= THRESHOLD:
            failed.append(name)
    print(f"{len(results)} checks, worst {max(results.values()):.3e}, threshold {THRESHOLD:.0e}")
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_bench_attn(args) -> int:
    report = analytic_costs(args.frames, args.grid_h, args.grid_w)
    try:
        measured_joint = measure_peak("joint", args.frames, args.grid_h, args.grid_w,
                                      channels=args.channels)["peak_bytes"]
        measured_dec = measure_peak("decoupled", args.frames, args.grid_h, args.grid_w,
                                    channels=args.channels)["peak_bytes"]
    except ResourceError as e:
        print(f"measurement skipped: {e}", file=sys.stderr)
        measured_joint = measured_dec = -1
    row = {
        "T": args.frames, "h": args.grid_h, "w": args.grid_w,
        "joint": report.joint_entries, "spatial": report.spatial_entries,
        "tav": report.tav_entries, "tva": report.tva_entries,
        "ratio": f"{report.ratio:.4f}",
        "measured_joint": measured_joint, "measured_decoupled": measured_dec,
    }
    if args.csv:
        path = Path(args.csv)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row))
            if new:
                writer.writeheader()
            writer.writerow(row)
    print(f"joint {report.joint_entries}  decoupled {report.decoupled_entries} "
          f"(spatial {report.spatial_entries} + tav {report.tav_entries} + tva {report.tva_entries})"
          f"  ratio {report.ratio:.2f}  literal-merged {report.paper_literal_entries}")
    if measured_joint >= 0:
        print(f"measured peak score bytes: joint {measured_joint}, decoupled {measured_dec}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catr",
                                     description="audio-visual video segmentation at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--size", type=int, default=80)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--multi-source", type=float, default=0.3)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON run config (default: desk preset)")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--data", help="training dataset directory")
    p.add_argument("--steps", type=int, help="override configured step count")
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="run inference and dump mask/overlay images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench-attn", help="attention-cost model: counts and measured bytes")
    p.add_argument("--T", dest="frames", type=int, default=5)
    p.add_argument("--h", dest="grid_h", type=int, default=16)
    p.add_argument("--w", dest="grid_w", type=int, default=16)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_bench_attn)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, DimensionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, TrainingDiverged, ResourceError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
