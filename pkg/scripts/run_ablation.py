#!/usr/bin/env python3
"""Attention on/off comparison: identical seed, data, and schedule.

Trains both variants on the synthetic task and prints a two-row evaluation
table. Desk-scale numbers measure the harness, not the full-resolution
benchmark.

Usage: python scripts/run_ablation.py [--seed 7] [--epochs 30]
"""
import argparse
import sys

import numpy as np

from auseg.data import synth_generate
from auseg.losses_metrics import LossConfig, format_eval_report
from auseg.training import CosineSchedule, TrainSettings, evaluate, init_rng, train
from auseg.unet import UnetConfig, build_model


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--epochs", type=int, default=30)
    args = parser.parse_args(argv)

    train_s = synth_generate(64, 32, 32, 3, np.random.default_rng(100))
    val_s = synth_generate(16, 32, 32, 3, np.random.default_rng(200))
    settings = TrainSettings(epochs=args.epochs, batch_size=8, seed=args.seed,
                             loss=LossConfig(),
                             schedule=CosineSchedule(eta_max=3e-3, eta_min=1e-6,
                                                     total_epochs=args.epochs),
                             patience=args.epochs, jitter_delta=0.02)

    matrices = []
    for attention in (True, False):
        cfg = UnetConfig(in_channels=3, num_classes=3, depth=2, base_channels=8,
                         attention_enabled=attention, reduction_ratio=4,
                         spatial_kernel=7, dropout_rate=0.0)
        model = build_model(cfg, init_rng(args.seed))
        name = "attention-unet" if attention else "plain-unet"
        print(f"--- training {name} ---")
        result = train(model, train_s, val_s, settings, log_line=print)
        model.load_state_arrays(result.best_state)
        _, cm = evaluate(model, val_s, settings.loss, settings.batch_size)
        matrices.append((name, cm))

    print()
    print(format_eval_report(matrices[0][0], matrices[0][1], extra_rows=[matrices[1]]))
    return 0


if __name__ == "__main__":
    sys.exit(run())
