"""AdamW with decoupled weight decay, cosine-annealed learning rate,
early stopping, the train/validate loop, and the learning-rate sweep harness.

L2 regularization is realized solely as AdamW's decoupled decay (applied to
every parameter). The schedule advances per epoch. Two runs with the same
seed, data, and config produce bit-identical logs and parameters.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .data import Sample, batch_iter, color_jitter, horizontal_flip, random_crop
from .errors import ConfigError, NumericError, TrainingError
from .losses_metrics import (ConfusionMatrix, LossConfig, combined_loss, confusion_accumulate,
                             miou, pixel_accuracy)
from .tensor import Parameter, Tape, backward
from .unet import UnetConfig, UnetModel, build_model, forward


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def init(cls, params: Sequence[Parameter], weight_decay: float = 0.01) -> "AdamWState":
        return cls(m={p.name: np.zeros_like(p.tensor.data) for p in params},
                   v={p.name: np.zeros_like(p.tensor.data) for p in params},
                   weight_decay=weight_decay)


def adamw_step(params: Sequence[Parameter], grads: Sequence[np.ndarray],
               state: AdamWState, lr: float) -> None:
    """One optimizer step; decay is decoupled from the adaptive term."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g in zip(params, grads):
        if g is None or not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {p.name!r}")
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.tensor.data -= lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                               + state.weight_decay * p.tensor.data)


@dataclass
class CosineSchedule:
    eta_max: float = 5e-4
    eta_min: float = 1e-6
    total_epochs: int = 30

    def __post_init__(self):
        if self.eta_min > self.eta_max:
            raise ConfigError(f"eta_min {self.eta_min} exceeds eta_max {self.eta_max}")
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")


def cosine_lr(sched: CosineSchedule, epoch: int) -> float:
    """eta_min + 0.5 (eta_max - eta_min)(1 + cos(pi epoch / T)); clamps past T."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    if epoch > sched.total_epochs:
        return sched.eta_min
    return sched.eta_min + 0.5 * (sched.eta_max - sched.eta_min) * (
        1.0 + math.cos(math.pi * epoch / sched.total_epochs))


@dataclass
class EarlyStopper:
    patience: int = 10
    min_delta: float = 1e-4
    best: float = math.inf
    since_improvement: int = 0


def early_stop_check(stopper: EarlyStopper, val_loss: float) -> bool:
    """True when training should stop. Improvement means strictly beating
    best - min_delta; the counter resets on improvement."""
    if not math.isfinite(val_loss):
        raise NumericError(f"early stopper fed a non-finite validation loss {val_loss}")
    if val_loss < stopper.best - stopper.min_delta:
        stopper.best = val_loss
        stopper.since_improvement = 0
        return False
    stopper.since_improvement += 1
    return stopper.since_improvement > stopper.patience


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    val_miou: float
    val_pa: float
    seconds: float


@dataclass
class TrainLog:
    rows: list[EpochRow] = field(default_factory=list)

    CSV_HEADER = "epoch,train_loss,val_loss,lr,miou,pa,seconds"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.train_loss:.9g},{r.val_loss:.9g},{r.lr:.9g},"
                         f"{r.val_miou:.9g},{r.val_pa:.9g},{r.seconds:.9g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        lines = [ln for ln in text.strip().splitlines() if ln]
        if not lines or lines[0] != cls.CSV_HEADER:
            raise ConfigError("train log CSV header mismatch")
        rows = []
        for ln in lines[1:]:
            e, tl, vl, lr, mi, pa, sec = ln.split(",")
            rows.append(EpochRow(int(e), float(tl), float(vl), float(lr),
                                 float(mi), float(pa), float(sec)))
        return cls(rows=rows)

    def best_row(self) -> EpochRow:
        if not self.rows:
            raise ConfigError("empty train log")
        return min(self.rows, key=lambda r: (r.val_loss, r.epoch))


@dataclass
class TrainSettings:
    """Everything the train loop needs beyond the model and the data."""

    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: CosineSchedule = field(default_factory=CosineSchedule)
    weight_decay: float = 0.01
    patience: int = 10
    min_delta: float = 1e-4
    flip_p: float = 0.5
    jitter_delta: float = 0.1
    crop_h: int = 0
    crop_w: int = 0


@dataclass
class TrainResult:
    model: UnetModel
    log: TrainLog
    best_state: dict[str, np.ndarray]
    best_epoch: int


def _rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


def init_rng(seed: int) -> np.random.Generator:
    """RNG for parameter initialization (stream 0 of the master seed)."""
    return _rng_for(seed, 0)


def _augmentations(cfg: TrainSettings):
    augs = []
    if cfg.crop_h > 0 and cfg.crop_w > 0:
        augs.append(partial(_crop, ch=cfg.crop_h, cw=cfg.crop_w))
    if cfg.flip_p > 0:
        augs.append(partial(_flip, p=cfg.flip_p))
    if cfg.jitter_delta > 0:
        augs.append(partial(_jitter, max_delta=cfg.jitter_delta))
    return augs


def _crop(s, rng, ch, cw):
    return random_crop(s, ch, cw, rng)


def _flip(s, rng, p):
    return horizontal_flip(s, rng, p)


def _jitter(s, rng, max_delta):
    return color_jitter(s, max_delta, rng)


def evaluate(model: UnetModel, samples: Sequence[Sample], loss_cfg: LossConfig,
             batch_size: int) -> tuple[float, ConfusionMatrix]:
    """Loss (sample-weighted mean) and confusion matrix over a split, no dropout."""
    cm = ConfusionMatrix.empty(model.cfg.num_classes)
    total_loss = 0.0
    total_n = 0
    for images, labels in batch_iter(samples, batch_size, shuffle=False):
        logits = forward(model, images, training=False)
        loss = combined_loss(logits, labels, loss_cfg)
        n = images.shape[0]
        total_loss += loss.item() * n
        total_n += n
        pred = np.argmax(logits.data, axis=1).astype(np.int64)
        confusion_accumulate(cm, pred, labels, loss_cfg.ignore_index)
    return total_loss / total_n, cm


def train(model: UnetModel, train_samples: Sequence[Sample], val_samples: Sequence[Sample],
          cfg: TrainSettings, log_line=None) -> TrainResult:
    """Optimize the model, returning the log and the best-validation snapshot.

    Per epoch: shuffled augmented batches -> combined loss -> backward ->
    AdamW at the cosine-annealed rate; then a validation pass (loss, mIoU,
    PA) feeds the log, the best-checkpoint tracker, and the early stopper.
    """
    if not train_samples or not val_samples:
        raise ConfigError("need at least one training and one validation sample")
    if cfg.epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {cfg.epochs}")
    data_rng = _rng_for(cfg.seed, 1)
    dropout_rng = _rng_for(cfg.seed, 2)
    params = list(model.params.values())
    state = AdamWState.init(params, weight_decay=cfg.weight_decay)
    stopper = EarlyStopper(patience=cfg.patience, min_delta=cfg.min_delta)
    augs = _augmentations(cfg)
    log = TrainLog()
    best_state = model.state_arrays()
    best_epoch = -1
    best_val = math.inf
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        lr = cosine_lr(cfg.schedule, epoch)
        epoch_loss = 0.0
        epoch_n = 0
        for batch_index, (images, labels) in enumerate(
                batch_iter(train_samples, cfg.batch_size, shuffle=True,
                           rng=data_rng, augmentations=augs)):
            model.zero_grads()
            with Tape() as tape:
                logits = forward(model, images, training=True, rng=dropout_rng)
                loss = combined_loss(logits, labels, cfg.loss)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
                backward(tape, loss)
            adamw_step(params, [p.tensor.grad for p in params], state, lr)
            n = images.shape[0]
            epoch_loss += value * n
            epoch_n += n
        val_loss, cm = evaluate(model, val_samples, cfg.loss, cfg.batch_size)
        row = EpochRow(epoch=epoch, train_loss=epoch_loss / epoch_n, val_loss=val_loss,
                       lr=lr, val_miou=miou(cm), val_pa=pixel_accuracy(cm),
                       seconds=time.perf_counter() - started)
        log.rows.append(row)
        if log_line is not None:
            log_line(f"epoch {epoch:3d}  train {row.train_loss:.6f}  val {row.val_loss:.6f}  "
                     f"lr {lr:.2e}  mIoU {row.val_miou:.4f}  PA {row.val_pa:.4f}")
        if val_loss < best_val:
            best_val = val_loss
            best_state = model.state_arrays()
            best_epoch = epoch
        if early_stop_check(stopper, val_loss):
            break
    return TrainResult(model=model, log=log, best_state=best_state, best_epoch=best_epoch)


@dataclass
class SweepRow:
    lr: float
    val_miou: float
    val_pa: float


def lr_sweep(unet_cfg: UnetConfig, train_samples: Sequence[Sample],
             val_samples: Sequence[Sample], cfg: TrainSettings,
             lrs: Sequence[float], log_line=None) -> list[SweepRow]:
    """Full train + best-checkpoint eval per learning rate, identical seeds/data.

    Rows keep the input grid order.
    """
    if len(lrs) < 1:
        raise ConfigError("learning-rate sweep needs at least one rate")
    rows = []
    for lr in lrs:
        run_cfg = TrainSettings(
            epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed, loss=cfg.loss,
            schedule=CosineSchedule(eta_max=lr, eta_min=min(cfg.schedule.eta_min, lr),
                                    total_epochs=cfg.schedule.total_epochs),
            weight_decay=cfg.weight_decay, patience=cfg.patience, min_delta=cfg.min_delta,
            flip_p=cfg.flip_p, jitter_delta=cfg.jitter_delta,
            crop_h=cfg.crop_h, crop_w=cfg.crop_w)
        model = build_model(unet_cfg, init_rng(cfg.seed))
        result = train(model, train_samples, val_samples, run_cfg, log_line=log_line)
        model.load_state_arrays(result.best_state)
        _, cm = evaluate(model, val_samples, cfg.loss, cfg.batch_size)
        rows.append(SweepRow(lr=lr, val_miou=miou(cm), val_pa=pixel_accuracy(cm)))
    return rows


def format_sweep_report(rows: Sequence[SweepRow]) -> str:
    lines = ["Learning Rate | mIoU | PA"]
    for r in rows:
        lines.append(f"{r.lr:.9g} | {100 * r.val_miou:.1f} | {100 * r.val_pa:.1f}")
    return "\n".join(lines) + "\n"


def sweep_report_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["learning_rate,miou,pa"]
    for r in rows:
        lines.append(f"{r.lr:.9g},{r.val_miou:.9g},{r.val_pa:.9g}")
    return "\n".join(lines) + "\n"
