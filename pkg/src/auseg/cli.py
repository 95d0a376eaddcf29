"""Command-line entry point.

Subcommands: train, eval, predict, gradcheck, synth, sweep-lr. Exit codes
are a stable contract: 0 ok, 1 check failure, 2 config error, 3 data error,
4 numeric failure, 5 checkpoint corruption.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetSpec, load_sample, load_split, save_sample, synth_generate
from .errors import (ConfigError, ContractError, CorruptionError, DataError, NumericError,
                     ShapeError, TrainingError)
from .losses_metrics import (ConfusionMatrix, confusion_accumulate, eval_report_csv,
                             format_eval_report, miou, pixel_accuracy)
from .runconfig import RunConfig, load_config, parse_config_text
from .svgplot import write_loss_svg
from .tensor import Tensor
from .training import (evaluate, format_sweep_report, init_rng, lr_sweep, sweep_report_csv,
                       train)
from .unet import build_model, forward, predict_labels
from .verification import format_gradcheck_table, run_gradcheck_suite

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_CORRUPT = 5

TRAIN_ARTIFACTS = ("resolved.cfg", "trainlog.csv", "losscurve.svg", "best.ckpt", "final.ckpt")


def _load_run_data(cfg: RunConfig):
    if not cfg.data_root:
        raise ConfigError("config key data_root must point at the dataset")
    train_spec = DatasetSpec(root=Path(cfg.data_root), split="train",
                             num_classes=cfg.num_classes, ignore_index=cfg.ignore_index)
    val_spec = DatasetSpec(root=Path(cfg.data_root), split="val",
                           num_classes=cfg.num_classes, ignore_index=cfg.ignore_index)
    return load_split(train_spec), load_split(val_spec)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_samples, val_samples = _load_run_data(cfg)
    loss_cfg = cfg.loss_config(train_labels=[s.label for s in train_samples])
    settings = cfg.train_settings(loss_cfg)
    model = build_model(cfg.unet_config(), init_rng(cfg.seed))
    resolved = cfg.resolved_text()
    (out_dir / "resolved.cfg").write_text(resolved)
    result = train(model, train_samples, val_samples, settings, log_line=print)
    (out_dir / "trainlog.csv").write_text(result.log.to_csv())
    rows = result.log.rows
    write_loss_svg(out_dir / "losscurve.svg", [r.epoch for r in rows],
                   [r.train_loss for r in rows], [r.val_loss for r in rows])
    save_checkpoint(out_dir / "best.ckpt", resolved, result.best_state)
    save_checkpoint(out_dir / "final.ckpt", resolved, result.model.state_arrays())
    best = result.log.best_row()
    print(f"done: best epoch {best.epoch} val_loss {best.val_loss:.6f} "
          f"mIoU {best.val_miou:.4f} PA {best.val_pa:.4f}")
    return EXIT_OK


def _model_from_checkpoint(ckpt_path):
    config_text, params = load_checkpoint(ckpt_path)
    cfg = parse_config_text(config_text)
    model = build_model(cfg.unet_config(), init_rng(cfg.seed))
    model.load_state_arrays(params)
    return cfg, model


def cmd_eval(args) -> int:
    cfg, model = _model_from_checkpoint(args.ckpt)
    spec = DatasetSpec(root=Path(args.data), split=args.split,
                       num_classes=cfg.num_classes, ignore_index=cfg.ignore_index)
    samples = load_split(spec)
    # "inverse" class weights are recomputed from the scored split here; that
    # affects only the printed loss, never mIoU/PA
    loss_cfg = cfg.loss_config(train_labels=[s.label for s in samples])
    val_loss, cm = evaluate(model, samples, loss_cfg, cfg.batch_size)
    report = format_eval_report(cfg.model_name, cm)
    print(report, end="")
    print(f"split {args.split}: loss {val_loss:.9g}")
    csv_path = Path(args.out) if args.out else Path(args.ckpt).parent / f"eval_{args.split}.csv"
    csv_path.write_text(eval_report_csv(cfg.model_name, cm))
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg, model = _model_from_checkpoint(args.ckpt)
    image_path = Path(args.image)
    if not image_path.is_file():
        raise DataError(f"image not found: {image_path}")
    from .data import read_ppm, write_pgm

    rgb = read_ppm(image_path)
    h, w = rgb.shape[:2]
    multiple = 2 ** cfg.depth
    if h % multiple or w % multiple:
        raise ConfigError(f"image extents {h}x{w} must be divisible by {multiple} (2^depth)")
    x = Tensor(rgb.astype(np.float64).transpose(2, 0, 1)[None] / 255.0)
    labels = predict_labels(model, x)[0]
    if labels.max() > 255:
        raise DataError("predicted class index exceeds PGM range")
    write_pgm(args.out, labels.astype(np.uint8))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck_suite(seed=args.seed, num_seeds=3, tol_override=args.tolerance)
    print(format_gradcheck_table(results), end="")
    failures = [r.name for r in results if not r.passed]
    if failures:
        print(f"FAILED: {', '.join(failures)}")
        return EXIT_CHECK
    print("all gradient checks passed")
    return EXIT_OK


def cmd_synth(args) -> int:
    h, w = args.size
    rng = np.random.default_rng(args.seed)
    samples = synth_generate(args.count, h, w, args.classes, rng)
    out = Path(args.out)
    for sample in samples:
        save_sample(out, sample)
    print(f"wrote {2 * len(samples)} files ({len(samples)} pairs) to {out}")
    return EXIT_OK


def cmd_sweep_lr(args) -> int:
    cfg = load_config(args.config)
    try:
        lrs = [float(tok) for tok in args.lrs.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--lrs must be comma-separated floats, got {args.lrs!r}") from exc
    if not lrs:
        raise ConfigError("--lrs lists no learning rates")
    train_samples, val_samples = _load_run_data(cfg)
    loss_cfg = cfg.loss_config(train_labels=[s.label for s in train_samples])
    settings = cfg.train_settings(loss_cfg)
    rows = lr_sweep(cfg.unet_config(), train_samples, val_samples, settings, lrs)
    report = format_sweep_report(rows)
    print(report, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "sweep.txt").write_text(report)
        (out_dir / "sweep.csv").write_text(sweep_report_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auseg",
                                     description="attention-gated Unet segmentation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1,
                   help="cap worker parallelism (results are identical for any value)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", default=None, help="CSV twin path (default: next to ckpt)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one PPM image into a PGM label map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification suite")
    p.add_argument("--tolerance", type=float, default=None,
                   help="override every unit's tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), default=(64, 64))
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep-lr", help="train once per learning rate and tabulate")
    p.add_argument("--config", required=True)
    p.add_argument("--lrs", required=True, help="comma-separated learning rates")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep_lr)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError,) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CorruptionError as exc:
        print(f"corrupt checkpoint: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (ShapeError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    raise SystemExit(main())
