"""Loss, Adam training steps, and the epoch loop with train/val logging."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import SegSample, make_batches
from .errors import InvalidInputError, NumericError, ShapeError
from .seeding import derive_rng
from .unet import UNetModel, adam_update, backward_from_head_grad, forward_with_trace
from .volume import MaskVolume, Volume

BCE_CLIP = 1e-7


@dataclass(frozen=True)
class Hyperparams:
    """The two tuned training knobs."""

    learning_rate: float
    batch_size: int

    def __post_init__(self):
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise InvalidInputError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def bce_loss(pred: Volume, target: MaskVolume) -> tuple[float, Volume]:
    """Voxel-mean binary cross-entropy and its gradient w.r.t. the prediction.

    Predictions are clipped to [1e-7, 1 - 1e-7] before the logs.
    """
    if pred.shape != target.shape or pred.channels != 1:
        raise ShapeError(
            f"prediction {tuple(pred.shape)}x{pred.channels}ch vs target {tuple(target.shape)}"
        )
    p = np.clip(pred.data[0], BCE_CLIP, 1.0 - BCE_CLIP)
    t = target.data.astype(np.float64)
    n = p.size
    loss = float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))
    grad = (p - t) / (p * (1.0 - p)) / n
    return loss, Volume(pred.shape, 1, grad[np.newaxis])


def _loss_and_head_grad(p: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus the gradient at the sigmoid pre-activation, (p - t)/n."""
    pc = np.clip(p, BCE_CLIP, 1.0 - BCE_CLIP)
    t = mask.astype(np.float64)
    loss = float(np.mean(-(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))))
    gz = (pc - t[np.newaxis]) / t.size
    return loss, gz


def voxel_accuracy(p: np.ndarray, mask: np.ndarray, threshold: float = 0.5) -> float:
    return float(np.mean((p[0] >= threshold) == (mask > 0)))


def _train_step_full(
    model: UNetModel, batch: list[SegSample], lr: float
) -> tuple[float, list[float], list[float]]:
    """Forward/backward over one mini-batch, Adam update in place.

    Returns (batch loss, per-sample losses, per-sample accuracies); the loss
    is the pre-update value.
    """
    if not batch:
        raise InvalidInputError("batch must be non-empty")
    total: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    losses = []
    accs = []
    scale = 1.0 / len(batch)
    for sample in batch:
        p, trace = forward_with_trace(model, sample.image.data)
        loss, gz = _loss_and_head_grad(p, sample.mask.data)
        losses.append(loss)
        accs.append(voxel_accuracy(p, sample.mask.data))
        grads, _ = backward_from_head_grad(model, trace, gz)
        for name, (gw, gb) in grads.items():
            if name in total:
                tw, tb = total[name]
                tw += gw
                tb += gb
            else:
                total[name] = (gw, gb)
    batch_loss = float(np.mean(losses))
    if not math.isfinite(batch_loss):
        raise NumericError(f"non-finite training loss {batch_loss}")
    scaled = {name: (gw * scale, gb * scale) for name, (gw, gb) in total.items()}
    adam_update(model, scaled, lr)
    return batch_loss, losses, accs


def train_step(model: UNetModel, batch: list[SegSample], lr: float) -> tuple[UNetModel, float]:
    """One optimizer step; returns the model and the pre-update batch loss."""
    loss, _, _ = _train_step_full(model, batch, lr)
    return model, loss


def evaluate_model(model: UNetModel, samples: list[SegSample]) -> tuple[float, float]:
    """Mean voxel BCE and mean voxel accuracy (threshold 0.5) over samples."""
    if not samples:
        raise InvalidInputError("evaluation set must be non-empty")
    losses = []
    accs = []
    for sample in samples:
        p, _ = forward_with_trace(model, sample.image.data)
        loss, _ = _loss_and_head_grad(p, sample.mask.data)
        losses.append(loss)
        accs.append(voxel_accuracy(p, sample.mask.data))
    return float(np.mean(losses)), float(np.mean(accs))


def train(
    model: UNetModel,
    train_samples: list[SegSample],
    val_samples: list[SegSample],
    hp: Hyperparams,
    epochs: int,
    seed: int,
    augment_fn=None,
) -> tuple[UNetModel, list[EpochLog]]:
    """Epoch loop: seeded shuffling, partial final batch kept, per-epoch logs.

    Epoch statistics are means over samples (not over batches), so unequal
    batch sizes do not skew them. ``augment_fn(sample, rng)``, when given, is
    applied to training samples at batch assembly; validation data never is.
    """
    if not train_samples or not val_samples:
        raise InvalidInputError("train and validation sets must be non-empty")
    logs: list[EpochLog] = []
    indices = list(range(len(train_samples)))
    for epoch in range(epochs):
        batches = make_batches(indices, hp.batch_size, seed, epoch)
        aug_rng = derive_rng(seed, "augment", epoch)
        epoch_losses: list[float] = []
        epoch_accs: list[float] = []
        for batch_ids in batches:
            batch = [train_samples[i] for i in batch_ids]
            if augment_fn is not None:
                batch = [augment_fn(s, aug_rng) for s in batch]
            _, losses, accs = _train_step_full(model, batch, hp.learning_rate)
            epoch_losses.extend(losses)
            epoch_accs.extend(accs)
        val_loss, val_acc = evaluate_model(model, val_samples)
        logs.append(
            EpochLog(
                epoch=epoch + 1,
                train_loss=float(np.mean(epoch_losses)),
                train_acc=float(np.mean(epoch_accs)),
                val_loss=val_loss,
                val_acc=val_acc,
            )
        )
    return model, logs
