"""Command-line entry point.

Subcommands: ``synth``, ``pretrain``, ``analyze``, ``eval``, ``gradcheck``.
Settings resolve as built-in defaults, then ``--config`` JSON, then flags.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .augment import resize_only
from .checkpoint import load_checkpoint
from .data import DatasetManifest, SynthConfig, generate_synthetic_dataset, manifest_path
from .errors import ConfigError, ViewGroupError
from .evaluation import embed, linear_probe, view_retrieval
from .gradcheck import run_suite
from .pretrain import LOSSES, PretrainConfig, pretrain_run


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _merge(defaults: dict, config_path, flags: dict) -> dict:
    merged = dict(defaults)
    if config_path:
        data = _read_json(config_path)
        unknown = set(data) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(data)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _emit_json(obj, out) -> None:
    text = json.dumps(obj, indent=1)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    defaults = {"num_sources": 200, "num_classes": 3, "image_size": 32, "seed": 0}
    opts = _merge(
        defaults,
        args.config,
        {"num_sources": args.num_sources, "num_classes": args.num_classes, "image_size": args.image_size, "seed": args.seed},
    )
    if not args.out:
        raise ConfigError("synth needs --out DIR")
    manifest = generate_synthetic_dataset(SynthConfig(**opts), args.out)
    print(f"wrote {len(manifest.entries)} images and manifest.json to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    base = PretrainConfig.desk() if args.preset == "desk" else PretrainConfig.paper()
    cfg = PretrainConfig.from_json(args.config, base) if args.config else base
    flags = {
        "manifest": args.manifest,
        "seed": args.seed,
        "tau": args.tau,
        "n_aug": args.n_aug,
        "batch_size": args.batch,
        "epochs": args.epochs,
        "loss": args.loss,
        "base_lr": args.lr,
    }
    if args.no_attention:
        flags["attention"] = False
    cfg = replace(cfg, **{k: v for k, v in flags.items() if v is not None})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg = replace(cfg, checkpoint_path=str(out / "checkpoint.grvs"), metrics_path=str(out / "metrics.csv"))
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    result = pretrain_run(cfg)
    losses = result.metrics.losses
    summary = {"epochs": len(losses), "first_loss": losses[0] if losses else None, "final_loss": losses[-1] if losses else None}
    summary.update({"checkpoint": cfg.checkpoint_path, "metrics": cfg.metrics_path})
    print(json.dumps(summary))
    return 0


def _c_grid(step, count):
    return tuple(round(step * k, 12) for k in range(1, count + 1))


def cmd_analyze(args) -> int:
    defaults = {
        "tau": 0.2,
        "attention": True,
        "base": analysis.DEFAULT_BASE,
        "c_step": 0.005,
        "c_count": 30,
        "taus": list(analysis.DEFAULT_TAUS),
        "positive_sim": analysis.DEFAULT_BASE,
        "sim_steps": 201,
    }
    flags = {
        "tau": args.tau,
        "base": args.base,
        "c_step": args.c_step,
        "c_count": args.c_count,
        "taus": args.taus,
        "positive_sim": args.positive_sim,
        "sim_steps": args.sim_steps,
    }
    if args.no_attention:
        flags["attention"] = False
    o = _merge(defaults, args.config, flags)
    grid = _c_grid(o["c_step"], o["c_count"])
    if args.study == "grad-gap":
        rows = analysis.gradient_gap_curve(o["tau"], o["attention"], grid, o["base"])
    elif args.study == "loss-gap":
        rows = analysis.loss_gap_curve(o["tau"], o["attention"], grid, o["base"])
    elif args.study == "sigmoid-margin":
        rows = analysis.sigmoid_margin_curve(o["tau"], np.linspace(-1.0, 1.0, int(o["sim_steps"])), o["positive_sim"])
    else:
        rows = analysis.tau_sweep(o["taus"], grid, o["base"], o["attention"])
    header = analysis.CSV_HEADERS[args.study]
    if args.out:
        analysis.write_csv(args.out, header, rows)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(repr(float(x)) for x in row))
    return 0


def _eval_config(args) -> PretrainConfig:
    return PretrainConfig.from_json(args.config, PretrainConfig.desk()) if args.config else PretrainConfig.desk()


def cmd_eval(args) -> int:
    cfg = _eval_config(args)
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint PATH")
    params, _ = load_checkpoint(args.checkpoint)
    source = args.manifest or cfg.manifest
    if not source:
        raise ConfigError("eval needs --manifest PATH")
    manifest = DatasetManifest.load(manifest_path(source))
    images = manifest.load_images()
    seed = cfg.seed if args.seed is None else args.seed
    if args.kind == "retrieval":
        n_aug = args.n_aug if args.n_aug is not None else cfg.n_aug
        report = view_retrieval(params, images, n_aug, cfg.augmentation, seed, args.k).to_dict()
    else:
        size = cfg.augmentation.output_size
        feats = embed(params, np.stack([resize_only(img, size) for img in images]))
        labels = manifest.class_ids
        order = np.random.default_rng(seed).permutation(len(images))
        n_test = max(1, int(round(args.test_fraction * len(images))))
        test, train = order[:n_test], order[n_test:]
        acc = linear_probe(feats[train], labels[train], feats[test], labels[test], args.steps, args.probe_lr)
        report = {"accuracy": acc, "num_train": int(train.size), "num_test": int(test.size), "num_classes": manifest.num_classes}
    _emit_json(report, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    results = run_suite(seed, args.instances)
    for r in results:
        print(r.line())
    if args.out:
        _emit_json([{"name": r.name, "max_rel_error": r.max_rel_error, "tolerance": r.tolerance, "passed": r.passed} for r in results], args.out)
    return 0 if all(r.passed for r in results) else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config; flags override its fields")
    common.add_argument("--seed", type=_seed, metavar="U64")
    common.add_argument("--out", metavar="PATH")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="viewgroup", description="View grouping loss pretraining toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic PPM dataset")
    p.add_argument("--num-sources", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--image-size", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", parents=[common], help="run pretraining; --out is the run directory")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--manifest", metavar="PATH")
    p.add_argument("--tau", type=float)
    p.add_argument("--n-aug", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=LOSSES)
    p.add_argument("--no-attention", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("analyze", parents=[common], help="loss-geometry curves as CSV")
    p.add_argument("study", choices=tuple(analysis.CSV_HEADERS))
    p.add_argument("--tau", type=float)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--base", type=float)
    p.add_argument("--c-step", type=float)
    p.add_argument("--c-count", type=int)
    p.add_argument("--taus", type=float, nargs="+")
    p.add_argument("--positive-sim", type=float)
    p.add_argument("--sim-steps", type=int)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", parents=[common], help="retrieval or linear-probe evaluation of a checkpoint")
    p.add_argument("kind", choices=("retrieval", "probe"))
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--manifest", metavar="PATH")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--n-aug", type=int)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--probe-lr", type=float, default=0.5)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ViewGroupError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
