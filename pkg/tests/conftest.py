import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from auseg.data import Sample, synth_generate
from auseg.losses_metrics import LossConfig
from auseg.training import CosineSchedule, TrainLog, TrainResult, TrainSettings, init_rng, train
from auseg.unet import UnetConfig, UnetModel, build_model


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# The desk-scale acceptance runs: 3 classes at 32x32, 64 train / 16 val,
# everything seed-fixed. The hyperparameters below are the frozen fixture
# confirmed by the first verified training run.

DESK_SEED = 7
DESK_TRAIN_SEED = 100
DESK_VAL_SEED = 200
DESK_LR = 3e-3


def desk_unet_config(attention: bool = True) -> UnetConfig:
    return UnetConfig(in_channels=3, num_classes=3, depth=2, base_channels=8,
                      attention_enabled=attention, reduction_ratio=4, spatial_kernel=7,
                      dropout_rate=0.0, attention_composition="parallel")


def desk_train_settings() -> TrainSettings:
    return TrainSettings(epochs=30, batch_size=8, seed=DESK_SEED, loss=LossConfig(),
                         schedule=CosineSchedule(eta_max=DESK_LR, eta_min=1e-6,
                                                 total_epochs=30),
                         weight_decay=0.01, patience=30, min_delta=1e-4,
                         flip_p=0.5, jitter_delta=0.02, crop_h=0, crop_w=0)


def desk_data() -> tuple[list[Sample], list[Sample]]:
    return (synth_generate(64, 32, 32, 3, rng(DESK_TRAIN_SEED)),
            synth_generate(16, 32, 32, 3, rng(DESK_VAL_SEED)))


@dataclass
class DeskRun:
    model: UnetModel
    result: TrainResult
    log: TrainLog
    seconds: float
    train_samples: list[Sample]
    val_samples: list[Sample]


def _run_desk(attention: bool) -> DeskRun:
    import time

    train_s, val_s = desk_data()
    model = build_model(desk_unet_config(attention), init_rng(DESK_SEED))
    started = time.perf_counter()
    result = train(model, train_s, val_s, desk_train_settings())
    elapsed = time.perf_counter() - started
    return DeskRun(model=model, result=result, log=result.log, seconds=elapsed,
                   train_samples=train_s, val_samples=val_s)


@pytest.fixture(scope="session")
def desk_run() -> DeskRun:
    """Attention-enabled training on the synthetic desk task (shared, ~70s)."""
    return _run_desk(attention=True)


@pytest.fixture(scope="session")
def desk_run_plain() -> DeskRun:
    """Same data and seed with attention disabled (the ablation twin)."""
    return _run_desk(attention=False)
