"""Mini-batch SGD-with-momentum training loop.

Supports two training methods (regular decay-on-plateau and one-cycle)
and four transfer arrangements: none, feature extractor (everything but
the head frozen), fine-tune-all (nothing frozen, uniform rate), and
gradual unfreezing with discriminative per-group rates driven by a
:class:`~smalltrain.sched.GroupPlan`. The model returned is the one with
the lowest validation loss across epochs (early stopping by checkpoint).

Runs are deterministic given the config seed: batch order, augmentation
draws and parameter updates all flow from one generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import sched
from .ndtensor import Graph, Tensor, backward
from .tinycnn import TinyCnn

METHODS = ("regular", "one_cycle")
TRANSFER_MODES = ("none", "feature_extractor", "fine_tune_all", "gradual_unfreeze")


class TrainingDiverged(RuntimeError):
    """Loss became NaN/inf; message names the failing iteration."""


@dataclass
class TrainConfig:
    method: str = "one_cycle"
    transfer_mode: str = "none"
    epochs: int = 20
    batch_size: int = 16
    max_lr: float = 0.1
    seed: int = 0
    momentum: float = 0.9   # constant momentum for regular training
    m_high: float = 0.95    # one-cycle momentum bounds
    m_low: float = 0.85

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.transfer_mode not in TRANSFER_MODES:
            raise ValueError(f"transfer_mode must be one of {TRANSFER_MODES}, "
                             f"got {self.transfer_mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.max_lr <= 0:
            raise ValueError(f"max_lr must be positive, got {self.max_lr}")
        if self.transfer_mode == "gradual_unfreeze" and self.method != "one_cycle":
            raise ValueError("gradual_unfreeze is defined over one-cycle iterations; "
                             "use method='one_cycle'")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float  # base rate at the first iteration of the epoch


@dataclass
class TrainResult:
    model: TinyCnn
    val_loss_curve: list[float]
    best_epoch: int
    epoch_log: list[EpochLog] = field(default_factory=list)
    test_auc: Optional[float] = None


def set_frozen(model: TinyCnn, flags: Sequence[bool]) -> None:
    """Apply per-group frozen flags; frozen tensors stop requiring grads
    so no update (and no velocity) can ever touch them."""
    for grp, frozen in zip(model.groups, flags):
        grp.frozen = bool(frozen)
        for name in grp.names:
            model.params[name].requires_grad = not frozen
ock_frozen = None  # noqa: E305  (sentinel removed below)


def apply_transfer_mode(model: TinyCnn, mode: str, method: str = "one_cycle") -> TinyCnn:
    """Set the static freeze plan for a transfer arrangement.

    gradual_unfreeze only fixes the starting state here; the per-iteration
    plan inside :func:`train` flips groups 2 and 1 on at 10% and 20% of
    the iterations.
    """
    if mode not in TRANSFER_MODES:
        raise ValueError(f"unknown transfer mode {mode!r}")
    if mode == "gradual_unfreeze" and method != "one_cycle":
        raise ValueError("gradual_unfreeze requires method='one_cycle'")
    if mode == "feature_extractor":
        set_frozen(model, [True, True, False])
    elif mode == "gradual_unfreeze":
        set_frozen(model, [True, True, False])
    else:
        set_frozen(model, [False, False, False])
    return model


def sgd_step(model: TinyCnn, velocities: dict[str, np.ndarray],
             group_lrs: Sequence[float], momentum: float) -> None:
    """Classical momentum update: v <- momentum*v + grad; w <- w - lr*v.
    Frozen groups are untouched."""
    for grp, lr in zip(model.groups, group_lrs):
        if grp.frozen:
            continue
        for name in grp.names:
            t = model.params[name]
            if t.grad is None:
                continue
            v = velocities[name]
            v *= momentum
            v += t.grad
            t.data -= lr * v


def evaluate_loss(model: TinyCnn, images: np.ndarray, labels: np.ndarray,
                  batch_size: int = 64) -> float:
    """Mean BCE over a whole set, batched."""
    total, n = 0.0, 0
    for start in range(0, len(images), batch_size):
        xb = images[start:start + batch_size]
        yb = labels[start:start + batch_size]
        g = Graph()
        loss = g.bce_loss(model.forward(g, Tensor(xb)), Tensor(yb))
        total += float(loss.data) * yb.size
        n += yb.size
    return total / n


def train(model: TinyCnn,
          train_set: tuple[np.ndarray, np.ndarray],
          val_set: tuple[np.ndarray, np.ndarray],
          cfg: TrainConfig,
          batch_transform: Optional[Callable[[np.random.Generator, np.ndarray], np.ndarray]] = None,
          ) -> TrainResult:
    """Run the full training loop and return the best-epoch model.

    ``train_set`` / ``val_set`` are (images, labels) pairs. Without a
    ``batch_transform`` the images must already be float network inputs
    of shape (N, 1, H, W); with one, raw training images are handed to
    the transform together with the run's generator each time a batch is
    formed (fresh augmentation every epoch). Validation inputs are always
    used as-is.
    """
    train_x, train_y = train_set
    val_x, val_y = val_set
    n = len(train_x)
    if n == 0 or len(val_x) == 0:
        raise ValueError("train: empty training or validation set")

    rng = np.random.default_rng(cfg.seed)
    apply_transfer_mode(model, cfg.transfer_mode, cfg.method)

    batches_per_epoch = math.ceil(n / cfg.batch_size)
    max_iter = cfg.epochs * batches_per_epoch

    plan = None
    gplan = None
    if cfg.method == "one_cycle":
        plan = sched.OneCyclePlan(cfg.max_lr, max_iter, m_high=cfg.m_high, m_low=cfg.m_low)
        if cfg.transfer_mode == "gradual_unfreeze":
            gplan = sched.GroupPlan(base=plan)

    velocities = {name: np.zeros(t.shape) for name, t in model.params.items()}
    epoch_lr = cfg.max_lr  # regular method: updated after each epoch
    best_plateau = math.inf

    val_curve: list[float] = []
    logs: list[EpochLog] = []
    best_loss = math.inf
    best_state = None
    best_epoch = -1
    i = 0

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        epoch_first_lr = None
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            raw = train_x[idx] if isinstance(train_x, np.ndarray) else [train_x[k] for k in idx]
            xb = batch_transform(rng, raw) if batch_transform is not None else raw
            yb = train_y[idx]

            if cfg.method == "one_cycle":
                base_lr = sched.one_cycle_lr(i, plan)
                mom = sched.one_cycle_momentum(i, plan)
            else:
                base_lr = epoch_lr
                mom = cfg.momentum
            if gplan is not None:
                entries = sched.group_schedule(i, gplan)
                set_frozen(model, [fr for _, fr in entries])
                group_lrs = [lr for lr, _ in entries]
            else:
                group_lrs = [base_lr] * 3
            if epoch_first_lr is None:
                epoch_first_lr = base_lr

            g = Graph()
            probs = model.forward(g, Tensor(xb))
            loss = g.bce_loss(probs, Tensor(yb))
            if not math.isfinite(float(loss.data)):
                raise TrainingDiverged(f"non-finite training loss at iteration {i}")
            model.zero_grads()
            backward(g, loss)
            sgd_step(model, velocities, group_lrs, mom)

            epoch_loss += float(loss.data) * yb.size
            i += 1

        train_loss = epoch_loss / train_y.size
        val_loss = evaluate_loss(model, val_x, val_y)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss after epoch {epoch}")
        val_curve.append(val_loss)
        logs.append(EpochLog(epoch, train_loss, val_loss, epoch_first_lr))
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = model.state()
            best_epoch = epoch

        if cfg.method == "regular":
            # decay-on-plateau, same rule as sched.regular_policy
            if val_loss < best_plateau * (1.0 - 1e-4):
                best_plateau = val_loss
            else:
                epoch_lr = max(epoch_lr / 10.0, cfg.max_lr / 1000.0)

    model.load_state(best_state)
    return TrainResult(model=model, val_loss_curve=val_curve, best_epoch=best_epoch,
                       epoch_log=logs)


def write_epoch_log_csv(path, logs: Sequence[EpochLog]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in logs:
            w.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss), repr(row.lr)])
