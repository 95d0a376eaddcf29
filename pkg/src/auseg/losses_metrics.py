"""Training objective (weighted cross-entropy + soft Dice) and segmentation
metrics (confusion matrix, mIoU, pixel accuracy) with report formatting.

Both loss terms are fused ops with analytic gradients, registered on the
active tape and verified against finite differences in the tests. Pixels
labeled with the ignore sentinel contribute nothing to values or gradients.
mIoU averages over observed classes only (any TP+FP+FN > 0), and ignored
pixels are excluded from every metric; the report header says so.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError, NumericError, ShapeError
from .tensor import Array, Tensor, add, record_op, scale
from .unet import LabelMap

DEFAULT_IGNORE = 255


@dataclass
class LossConfig:
    alpha: float = 0.5
    class_weights: np.ndarray | None = None
    dice_smooth: float = 1e-6
    ignore_index: int = DEFAULT_IGNORE

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.dice_smooth <= 0.0:
            raise ContractError(f"dice_smooth must be positive, got {self.dice_smooth}")
        if self.class_weights is not None:
            self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
            if self.class_weights.ndim != 1 or np.any(self.class_weights <= 0):
                raise ContractError("class_weights must be a 1-D vector of positive floats")


def _check_loss_inputs(logits: Tensor, y: LabelMap, cfg: LossConfig) -> tuple[Array, Array]:
    if logits.data.ndim != 4:
        raise ShapeError(f"logits must be NKHW, got shape {logits.shape}")
    n, k, h, w = logits.shape
    if k < 2:
        raise ShapeError(f"need >= 2 classes, got {k}")
    y = np.asarray(y)
    if y.shape != (n, h, w):
        raise ShapeError(f"labels shape {y.shape} does not match logits {logits.shape}")
    if cfg.class_weights is not None and cfg.class_weights.shape != (k,):
        raise ShapeError(f"class_weights length {cfg.class_weights.shape} != {k} classes")
    valid = y != cfg.ignore_index
    bad = valid & ((y < 0) | (y >= k))
    if np.any(bad):
        loc = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"label value {int(y[loc])} out of range [0, {k}) at index {loc}")
    if not np.any(valid):
        raise ContractError("all pixels carry the ignore label; loss is undefined")
    return y, valid


def _log_softmax(z: Array) -> Array:
    zs = z - z.max(axis=1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, y: LabelMap, cfg: LossConfig) -> Tensor:
    """Mean over non-ignored pixels of -w[y] * log softmax(logits)[y]."""
    y, valid = _check_loss_inputs(logits, y, cfg)
    n, k, h, w = logits.shape
    count = int(valid.sum())
    y_safe = np.where(valid, y, 0)
    lsm = _log_softmax(logits.data)
    picked = np.take_along_axis(lsm, y_safe[:, None], axis=1)[:, 0]
    weights = cfg.class_weights if cfg.class_weights is not None else np.ones(k)
    w_pix = weights[y_safe] * valid
    value = -(w_pix * picked).sum() / count
    if not np.isfinite(value):
        raise NumericError("cross-entropy overflowed to a non-finite value")

    probs = np.exp(lsm)
    onehot_scale = w_pix / count  # [N, H, W]

    def bwd(g: Array):
        gs = float(g.reshape(-1)[0])
        dz = probs * onehot_scale[:, None]
        flat = dz.reshape(n, k, h * w)
        idx = y_safe.reshape(n, h * w)
        rows = np.arange(n)[:, None]
        flat[rows, idx, np.arange(h * w)[None, :]] -= onehot_scale.reshape(n, h * w)
        return (gs * dz,)

    return record_op("cross_entropy", (logits,), np.float64(value), bwd)


def dice_loss(logits: Tensor, y: LabelMap, cfg: LossConfig) -> Tensor:
    """Soft Dice over softmax probabilities, averaged over classes present in y."""
    y, valid = _check_loss_inputs(logits, y, cfg)
    n, k, h, w = logits.shape
    s = cfg.dice_smooth
    y_safe = np.where(valid, y, 0)
    zs = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(zs)
    probs = e / e.sum(axis=1, keepdims=True)

    onehot = np.zeros((n, k, h, w))
    flat = onehot.reshape(n, k, h * w)
    flat[np.arange(n)[:, None], y_safe.reshape(n, h * w), np.arange(h * w)[None, :]] = 1.0
    onehot *= valid[:, None]

    vmask = valid[:, None].astype(np.float64)
    inter = (probs * onehot * vmask).sum(axis=(0, 2, 3))   # I_k
    p_sum = (probs * vmask).sum(axis=(0, 2, 3))            # A_k
    y_sum = onehot.sum(axis=(0, 2, 3))                     # B_k
    present = y_sum > 0
    n_present = int(present.sum())
    denom = p_sum + y_sum + s
    per_class = 1.0 - (2.0 * inter + s) / denom
    value = per_class[present].sum() / n_present
    if not np.isfinite(value):
        raise NumericError("dice loss overflowed to a non-finite value")

    def bwd(g: Array):
        gs = float(g.reshape(-1)[0])
        # dL/dP per class, zero for classes absent from the ground truth
        coeff = np.where(present, (2.0 * inter + s) / denom ** 2, 0.0) / n_present
        lin = np.where(present, 2.0 / denom, 0.0) / n_present
        dP = vmask * (coeff[None, :, None, None] - onehot * lin[None, :, None, None])
        dz = probs * (dP - (probs * dP).sum(axis=1, keepdims=True))
        return (gs * dz,)

    return record_op("dice_loss", (logits,), np.float64(value), bwd)


def combined_loss(logits: Tensor, y: LabelMap, cfg: LossConfig) -> Tensor:
    """alpha * cross-entropy + (1 - alpha) * Dice; grads flow through both."""
    ce = cross_entropy(logits, y, cfg)
    dc = dice_loss(logits, y, cfg)
    return add(scale(ce, cfg.alpha), scale(dc, 1.0 - cfg.alpha))


def inverse_frequency_weights(labels: list[LabelMap], num_classes: int,
                              ignore_index: int = DEFAULT_IGNORE) -> np.ndarray:
    """Per-class weights proportional to inverse pixel frequency, mean 1.

    Classes absent from the labels get weight 1. Intended to be fed from the
    training split when class imbalance matters.
    """
    counts = np.zeros(num_classes, dtype=np.int64)
    for lab in labels:
        lab = np.asarray(lab)
        valid = lab != ignore_index
        counts += np.bincount(lab[valid].reshape(-1), minlength=num_classes)[:num_classes]
    weights = np.ones(num_classes)
    seen = counts > 0
    if np.any(seen):
        inv = 1.0 / counts[seen]
        weights[seen] = inv / inv.mean()
    return weights


# ---------------------------------------------------------------------------
# metrics


@dataclass
class ConfusionMatrix:
    """K x K integer counts; rows index ground truth, columns prediction."""

    counts: np.ndarray

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        if num_classes < 2:
            raise ContractError(f"need >= 2 classes, got {num_classes}")
        return cls(counts=np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.counts.shape != self.counts.shape:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self


def confusion_accumulate(cm: ConfusionMatrix, pred: LabelMap, y: LabelMap,
                         ignore_index: int = DEFAULT_IGNORE) -> ConfusionMatrix:
    """Add pixel counts for (truth, prediction) pairs, skipping ignored truth."""
    pred = np.asarray(pred)
    y = np.asarray(y)
    if pred.shape != y.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {y.shape}")
    k = cm.num_classes
    bad_pred = (pred < 0) | (pred >= k)
    if np.any(bad_pred):
        loc = tuple(int(i) for i in np.argwhere(bad_pred)[0])
        raise DataError(f"prediction value {int(pred[loc])} out of range [0, {k}) at index {loc}")
    valid = y != ignore_index
    bad_truth = valid & ((y < 0) | (y >= k))
    if np.any(bad_truth):
        loc = tuple(int(i) for i in np.argwhere(bad_truth)[0])
        raise DataError(f"label value {int(y[loc])} out of range [0, {k}) at index {loc}")
    combined = k * y[valid].astype(np.int64) + pred[valid].astype(np.int64)
    cm.counts += np.bincount(combined, minlength=k * k).reshape(k, k)
    return cm


def per_class_iou(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """(observed mask, IoU per class); IoU is NaN for unobserved classes."""
    if cm.total == 0:
        raise ContractError("confusion matrix is empty")
    tp = np.diag(cm.counts).astype(np.float64)
    denom = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - np.diag(cm.counts)
    observed = denom > 0
    iou = np.full(cm.num_classes, np.nan)
    iou[observed] = tp[observed] / denom[observed]
    return observed, iou


def miou(cm: ConfusionMatrix) -> float:
    observed, iou = per_class_iou(cm)
    return float(iou[observed].mean())


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ContractError("confusion matrix is empty")
    return float(np.diag(cm.counts).sum() / cm.total)


# ---------------------------------------------------------------------------
# reporting


REPORT_HEADER = ("# mIoU averaged over observed classes; "
                 "ignore-labeled pixels excluded from all metrics")


def format_eval_report(model_name: str, cm: ConfusionMatrix,
                       extra_rows: list[tuple[str, ConfusionMatrix]] | None = None) -> str:
    """Fixed-width table (percent, 1 decimal) plus a per-class IoU listing."""
    rows = [(model_name, cm)] + list(extra_rows or [])
    lines = [REPORT_HEADER, f"{'Model':<20}{'mIoU':>8}{'PA':>8}"]
    for name, matrix in rows:
        lines.append(f"{name:<20}{100 * miou(matrix):>8.1f}{100 * pixel_accuracy(matrix):>8.1f}")
    lines.append("")
    lines.append("Per-class IoU:")
    for name, matrix in rows:
        observed, iou = per_class_iou(matrix)
        listing = "  ".join(f"{k}:{iou[k]:.3f}" for k in range(matrix.num_classes) if observed[k])
        lines.append(f"  {name}: {listing}")
    return "\n".join(lines) + "\n"


def eval_report_csv(model_name: str, cm: ConfusionMatrix) -> str:
    """Machine-readable twin: one wide row, raw fractions at 9 significant digits."""
    observed, iou = per_class_iou(cm)
    header = ["model", "miou", "pa"] + [f"iou_{k}" for k in range(cm.num_classes)]
    cells = [model_name, f"{miou(cm):.9g}", f"{pixel_accuracy(cm):.9g}"]
    cells += [f"{iou[k]:.9g}" if observed[k] else "" for k in range(cm.num_classes)]
    return ",".join(header) + "\n" + ",".join(cells) + "\n"
