"""Command-line surface: train, infer, eval, bench-adp, synth.

Exit codes: 0 success, 1 partial failures (skipped/unpaired files),
2 configuration problems, 3 training aborted on a non-finite loss.
"""

import argparse
import os
import sys

import numpy as np
import torch
from PIL import Image

from .config import ExperimentConfig
from .exceptions import ConfigError, InputError, TrainingDiverged
from .metrics import MetricReport, mean_curves
from .partition import PartitionConfig, cost_compare
from .reports import (COST_COLUMNS, render_cost_figure, render_curves, write_csv,
                      write_curves_csv, write_metric_report)
from .synth import (SynthSpec, generate_samples, load_uncertainty_corpus,
                    save_dataset, save_uncertainty_corpus, uncertainty_corpus)
from .trainer import load_checkpoint, seed_everything, train

IMAGE_EXTS = (".png", ".jpg", ".jpeg")


def _load_config(path, seed=None):
    if not path or not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig.from_file(path)
    if seed is not None:
        cfg.set("seed", seed)
    return cfg


def _require_file(path, what):
    if not path or not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _require_dir(path, what):
    if not path or not os.path.isdir(path):
        raise InputError(f"{what} directory not found: {path}")
    return path


def cmd_train(args):
    cfg = _load_config(args.config, args.seed)
    if args.resume:
        _require_file(args.resume, "resume checkpoint")
    try:
        result = train(cfg, resume=args.resume, log_fn=print)
    except TrainingDiverged as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    print(f"trained {result.steps} steps; best weighted-F "
          f"{result.best_weighted_f:.4f}; checkpoints in {result.run_dir}")
    return 0


def _stage_factors(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--stage-factors needs 3 entries, got {text!r}")
    return tuple("full" if p.strip() == "full" else float(p) for p in parts)


def cmd_infer(args):
    cfg = _load_config(args.config, args.seed)
    seed_everything(cfg.get("seed"))
    state = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    if state.get("arch_hash") != cfg.arch_hash():
        print(f"checkpoint architecture {state.get('arch_hash')} does not match "
              f"config {cfg.arch_hash()}", file=sys.stderr)
        return 2
    model = cfg.build_model()
    model.load_state_dict(state["model"])
    model.eval()
    factors = _stage_factors(args.stage_factors) if args.stage_factors \
        else cfg.stage_factors()
    partition_cfg = cfg.partition_config()
    resolution = cfg.get("resolution")
    _require_dir(args.input, "input")
    os.makedirs(args.output, exist_ok=True)
    names = sorted(f for f in os.listdir(args.input)
                   if f.lower().endswith(IMAGE_EXTS))
    skipped = 0
    for name in names:
        path = os.path.join(args.input, name)
        try:
            image = Image.open(path).convert("RGB")
        except Exception as exc:  # unreadable file: warn and continue
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            skipped += 1
            continue
        original = image.size
        net_in = image.resize((resolution, resolution), Image.BILINEAR)
        tensor = torch.from_numpy(
            np.asarray(net_in, dtype=np.float32).transpose(2, 0, 1) / 255.0
        )[None]
        with torch.no_grad():
            out = model(tensor, mode=args.mode, partition_cfg=partition_cfg,
                        stage_factors=factors)
        pred = out.final[0, 0].clamp(0, 1).numpy()
        stem = os.path.splitext(name)[0]
        pred_img = Image.fromarray((pred * 255).astype(np.uint8))
        if pred_img.size != original:
            pred_img = pred_img.resize(original, Image.BILINEAR)
        pred_img.save(os.path.join(args.output, f"{stem}.png"))
        if args.dump_uncertainty:
            # per-stage debug maps live in a subdirectory so the primary
            # outputs stay pairable by stem; guidance values top out at 0.5
            # and are scaled x2 to fill the 8-bit range
            stage_dir = os.path.join(args.output, "stages")
            os.makedirs(stage_dir, exist_ok=True)
            for j, u in enumerate(out.guidance_maps, start=1):
                u_img = (u[0, 0].clamp(0, 0.5).numpy() * 2 * 255).astype(np.uint8)
                Image.fromarray(u_img).save(
                    os.path.join(stage_dir, f"{stem}_u{j}.png"))
            for j, stage_pred in enumerate(out.refined, start=1):
                p_img = (stage_pred[0, 0].clamp(0, 1).numpy() * 255).astype(np.uint8)
                Image.fromarray(p_img).save(
                    os.path.join(stage_dir, f"{stem}_r{j}.png"))
    print(f"wrote {len(names) - skipped} predictions to {args.output}")
    return 1 if skipped else 0


def _grayscale(path):
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def cmd_eval(args):
    seed_everything(args.seed or 0)
    def stems(d):
        return {os.path.splitext(f)[0]: os.path.join(d, f)
                for f in sorted(os.listdir(d)) if f.lower().endswith(IMAGE_EXTS)}
    preds = stems(_require_dir(args.pred, "prediction"))
    gts = stems(_require_dir(args.gt, "ground-truth"))
    subset = None
    if args.subset:
        with open(args.subset, encoding="utf-8") as fh:
            subset = {line.strip() for line in fh if line.strip()}
        preds = {k: v for k, v in preds.items() if k in subset}
        gts = {k: v for k, v in gts.items() if k in subset}
    unpaired = sorted(set(preds) ^ set(gts))
    for stem in unpaired:
        side = "prediction" if stem in preds else "ground truth"
        print(f"unpaired {side}: {stem}", file=sys.stderr)
    shared = sorted(set(preds) & set(gts))
    named = []
    for stem in shared:
        pred = _grayscale(preds[stem])
        gt = np.asarray(Image.open(gts[stem]).convert("L")) >= 128
        named.append((stem, pred, gt))
    report = MetricReport.from_pairs(named)
    out_json = args.out
    base = os.path.splitext(out_json)[0]
    os.makedirs(os.path.dirname(os.path.abspath(out_json)), exist_ok=True)
    write_metric_report(report, out_json, base + ".csv")
    if named:
        curves = mean_curves((p, g) for _, p, g in named)
        write_curves_csv(curves, base + "_curves.csv")
        if not args.no_figures:
            render_curves(curves, base + "_pr.png", base + "_fm.png")
    for key, value in report.aggregate.items():
        print(f"{key}: {value:.4f}")
    return 1 if unpaired else 0


def cmd_bench_adp(args):
    seed_everything(args.seed or 0)
    if args.corpus:
        maps = load_uncertainty_corpus(_require_dir(args.corpus, "corpus"))
    else:
        maps = uncertainty_corpus(args.side, args.synthetic,
                                  occupancy=tuple(args.occupancy),
                                  seed=args.seed or 0)
    if not maps:
        print("empty corpus", file=sys.stderr)
        return 2
    cfgs = []
    for t in args.thresholds:
        if t == 0:
            cfgs.append(PartitionConfig(p_threshold=0.0, mode="global"))
        elif t == 1:
            cfgs.append(PartitionConfig(p_threshold=1.0, mode="fixed-window"))
        else:
            cfgs.append(PartitionConfig(p_threshold=t, mode="adp"))
    rows = cost_compare(maps, cfgs, channels=args.channels)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_csv(args.out, rows, COST_COLUMNS)
    if not args.no_figures:
        render_cost_figure(rows, os.path.splitext(args.out)[0] + ".png")
    by_mode = {}
    for row in rows:
        by_mode.setdefault((row["mode"], row["p_threshold"]), []).append(row["mac_count"])
    for (mode, pt), macs in sorted(by_mode.items()):
        print(f"{mode} p_t={pt:g}: mean mac_count {np.mean(macs):.3g}")
    return 0


def cmd_synth(args):
    seed_everything(args.seed or 0)
    if args.kind == "images":
        spec = SynthSpec(canvas=args.size, seed=args.seed or 0)
        manifest = save_dataset(generate_samples(spec, args.count), args.out)
        print(f"wrote {args.count} samples, manifest {manifest}")
    else:
        maps = uncertainty_corpus(args.size, args.count,
                                  occupancy=tuple(args.occupancy),
                                  seed=args.seed or 0)
        save_uncertainty_corpus(maps, args.out)
        print(f"wrote {args.count} uncertainty maps to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="salref")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="write saliency PNGs for a directory")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=("train", "infer"), default="infer")
    p.add_argument("--stage-factors", default=None,
                   help="three comma-separated factors, e.g. 2,2,full")
    p.add_argument("--dump-uncertainty", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--subset", default=None, help="file of stems to keep")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench-adp", help="attention-cost accounting over a corpus")
    p.add_argument("--corpus", default=None, help="directory of uncertainty PNGs")
    p.add_argument("--synthetic", type=int, default=0,
                   help="generate this many synthetic maps instead")
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--occupancy", type=float, nargs=2, default=(0.02, 0.05))
    p.add_argument("--thresholds", type=lambda s: [float(t) for t in s.split(",")],
                   default=[0.0, 0.2, 1.0])
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_bench_adp)

    p = sub.add_parser("synth", help="generate synthetic datasets or corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("images", "uncertainty"), default="images")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--occupancy", type=float, nargs=2, default=(0.02, 0.05))
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
