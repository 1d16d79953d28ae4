"""Learning-rate and momentum policies.

Four policies live here:

* a cosine segment interpolating between two rates,
      f(i) = lr_end + (lr_start - lr_end)/2 * (1 + cos(i*pi/T))
* the one-cycle policy: a rising cosine segment from max_lr/25 to max_lr
  over the first ceil(0.3 * max_iter) iterations, then a falling segment
  from max_lr down to max_lr/25000, with momentum following the mirrored
  pattern (high -> low -> high);
* decay-on-plateau for regular training (divide by 10 whenever the
  validation loss stops improving, floored at max_lr/1000);
* a learning-rate finder that sweeps geometrically increasing rates and
  returns the rate at which the smoothed loss bottoms out.

A :class:`GroupPlan` extends the one-cycle policy to three layer groups
with per-group scales (1/9, 1/3, 1) and staged unfreezing (group 3 always
trainable, group 2 after 10% of the iterations, group 1 after 20%).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

RISE_DIV = 25.0       # starting rate = max_lr / 25
FALL_DIV = 25000.0    # final rate = max_lr / 25000
CUT_FRACTION = 0.3    # rising segment covers 30% of the iterations


@dataclass(frozen=True)
class CosineSegment:
    """One cosine interpolation segment over T iterations."""

    lr_start: float
    lr_end: float
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"CosineSegment: T must be >= 1, got {self.T}")


def cosine(i: float, seg: CosineSegment) -> float:
    """Evaluate the segment at iteration i in [0, T]."""
    if not 0 <= i <= seg.T:
        raise ValueError(f"cosine: iteration {i} outside [0, {seg.T}]")
    return seg.lr_end + (seg.lr_start - seg.lr_end) / 2.0 * (1.0 + math.cos(i * math.pi / seg.T))


@dataclass(frozen=True)
class OneCyclePlan:
    """One-cycle learning rate and momentum plan.

    The learning rate rises from max_lr/25 to max_lr over the first
    ``cut = ceil(0.3 * max_iter)`` iterations and falls to max_lr/25000
    over the rest; momentum runs the opposite way between m_high and
    m_low.
    """

    max_lr: float
    max_iter: int
    m_high: float = 0.95
    m_low: float = 0.85

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ValueError(f"OneCyclePlan: max_lr must be positive, got {self.max_lr}")
        if self.max_iter < 2:
            raise ValueError(f"OneCyclePlan: max_iter must be >= 2, got {self.max_iter}")
        if not 1 <= self.cut < self.max_iter:
            raise ValueError(f"OneCyclePlan: cut {self.cut} outside [1, {self.max_iter})")

    @property
    def cut(self) -> int:
        return math.ceil(CUT_FRACTION * self.max_iter)


def one_cycle_lr(i: float, plan: OneCyclePlan) -> float:
    """Learning rate at iteration i in [0, max_iter]."""
    if not 0 <= i <= plan.max_iter:
        raise ValueError(f"one_cycle_lr: iteration {i} outside [0, {plan.max_iter}]")
    if i < plan.cut:
        seg = CosineSegment(plan.max_lr / RISE_DIV, plan.max_lr, plan.cut)
        return cosine(i, seg)
    seg = CosineSegment(plan.max_lr, plan.max_lr / FALL_DIV, plan.max_iter - plan.cut)
    return cosine(i - plan.cut, seg)


def one_cycle_momentum(i: float, plan: OneCyclePlan) -> float:
    """Momentum at iteration i: m_high -> m_low over the rising-lr segment,
    back to m_high over the falling one."""
    if not 0 <= i <= plan.max_iter:
        raise ValueError(f"one_cycle_momentum: iteration {i} outside [0, {plan.max_iter}]")
    if i < plan.cut:
        return cosine(i, CosineSegment(plan.m_high, plan.m_low, plan.cut))
    return cosine(i - plan.cut, CosineSegment(plan.m_low, plan.m_high, plan.max_iter - plan.cut))


def regular_policy(validation_losses: Sequence[float], max_lr: float,
                   margin: float = 1e-4, floor_div: float = 1000.0) -> list[float]:
    """Decay-on-plateau schedule for regular training.

    Element e of the result is the learning rate in effect after the
    epoch-e validation loss has been judged, i.e. the rate the next epoch
    trains with; the first epoch always trains at max_lr. An epoch
    plateaus when its loss fails to beat the best seen so far by a
    relative ``margin``; each plateau divides the rate by 10, floored at
    max_lr / floor_div.
    """
    if max_lr <= 0:
        raise ValueError(f"regular_policy: max_lr must be positive, got {max_lr}")
    lr = max_lr
    best = math.inf
    out = []
    for loss in validation_losses:
        if loss < best * (1.0 - margin):
            best = loss
        else:
            lr = max(lr / 10.0, max_lr / floor_div)
        out.append(lr)
    return out


@dataclass
class LrFindResult:
    """Outcome of a learning-rate sweep."""

    max_lr: float
    lrs: np.ndarray
    losses: np.ndarray
    smoothed: np.ndarray
    stopped_at: int  # number of steps actually taken


def lr_scan(step_fn: Callable[[float], float], lr_min: float = 1e-6, lr_max: float = 1.0,
            n_steps: int = 100, beta: float = 0.98, stop_factor: float = 4.0) -> LrFindResult:
    """Sweep geometrically increasing learning rates through ``step_fn``.

    ``step_fn(lr)`` must report the current loss and then apply one update
    at that rate. Rates run from lr_min at step 0 to lr_max at step
    n_steps. Losses are smoothed with a bias-corrected exponential moving
    average; the sweep halts early once the smoothed loss exceeds
    ``stop_factor`` times the best smoothed loss, and the rate at the
    smoothed minimum is returned.
    """
    if lr_min >= lr_max:
        raise ValueError(f"lr_scan: need lr_min < lr_max, got {lr_min} >= {lr_max}")
    ratio = lr_max / lr_min
    lrs, losses, smoothed = [], [], []
    avg = 0.0
    best = math.inf
    for k in range(n_steps + 1):
        lr = lr_min * ratio ** (k / n_steps)
        loss = float(step_fn(lr))
        if k == 0 and not math.isfinite(loss):
            raise ValueError("lr_scan: loss is not finite at step 0")
        avg = beta * avg + (1.0 - beta) * loss
        sm = avg / (1.0 - beta ** (k + 1))
        lrs.append(lr)
        losses.append(loss)
        smoothed.append(sm)
        best = min(best, sm)
        if sm > stop_factor * best:
            break
    smoothed_arr = np.array(smoothed)
    pick = int(smoothed_arr.argmin())
    return LrFindResult(max_lr=lrs[pick], lrs=np.array(lrs), losses=np.array(losses),
                        smoothed=smoothed_arr, stopped_at=len(lrs))


def lr_find(model, batches: Sequence[tuple[np.ndarray, np.ndarray]],
            lr_min: float = 1e-6, lr_max: float = 1.0, n_steps: int = 100,
            beta: float = 0.98, stop_factor: float = 4.0) -> LrFindResult:
    """Learning-rate finder for a model with ``forward(graph, x) -> probs``.

    Cycles through ``batches`` (pairs of input/target arrays), taking one
    plain SGD step per rate. The model's parameters are restored to their
    initial values afterwards, so the finder can precede a real run.
    """
    from . import ndtensor

    if not batches:
        raise ValueError("lr_find: data must be non-empty")
    saved = {name: t.data.copy() for name, t in model.params.items()}
    counter = {"k": 0}

    def step(lr: float) -> float:
        xb, yb = batches[counter["k"] % len(batches)]
        counter["k"] += 1
        g = ndtensor.Graph()
        probs = model.forward(g, ndtensor.Tensor(xb))
        loss = g.bce_loss(probs, ndtensor.Tensor(yb))
        for t in model.params.values():
            t.zero_grad()
        ndtensor.backward(g, loss)
        for t in model.params.values():
            if t.grad is not None:
                t.data -= lr * t.grad
        return float(loss.data)

    try:
        return lr_scan(step, lr_min=lr_min, lr_max=lr_max, n_steps=n_steps,
                       beta=beta, stop_factor=stop_factor)
    finally:
        for name, t in model.params.items():
            t.data = saved[name]
            t.zero_grad()


@dataclass(frozen=True)
class GroupPlan:
    """One-cycle plan extended to three layer groups.

    Group 3 (the head) trains from iteration 0 at the base schedule;
    groups 2 and 1 unfreeze after 10% and 20% of the iterations and train
    at 1/3 and 1/9 of the base rate.
    """

    base: OneCyclePlan
    group_scales: tuple[float, float, float] = (1.0 / 9.0, 1.0 / 3.0, 1.0)
    unfreeze_fracs: tuple[float, float, float] = (0.2, 0.1, 0.0)

    def __post_init__(self):
        if not (self.group_scales[0] < self.group_scales[1] < self.group_scales[2]):
            raise ValueError(f"GroupPlan: scales must increase toward the head, got {self.group_scales}")
        if not (self.unfreeze_fracs[0] >= self.unfreeze_fracs[1] >= self.unfreeze_fracs[2]):
            raise ValueError(f"GroupPlan: unfreeze points must not increase toward the head, "
                             f"got {self.unfreeze_fracs}")

    def unfreeze_iters(self) -> tuple[float, float, float]:
        return tuple(f * self.base.max_iter for f in self.unfreeze_fracs)


def group_schedule(i: float, gplan: GroupPlan) -> list[tuple[float, bool]]:
    """Per-group (learning rate, frozen) at iteration i, groups 1..3."""
    base_lr = one_cycle_lr(i, gplan.base)
    thresholds = gplan.unfreeze_iters()
    return [(base_lr * s, i < thr) for s, thr in zip(gplan.group_scales, thresholds)]


def write_schedule_csv(path, gplan: GroupPlan) -> None:
    """Dump the full per-iteration plan (rates, momentum, frozen flags)
    so the cycle shape can be plotted."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "lr_g1", "lr_g2", "lr_g3", "momentum",
                    "frozen_g1", "frozen_g2", "frozen_g3"])
        for i in range(gplan.base.max_iter + 1):
            rows = group_schedule(i, gplan)
            m = one_cycle_momentum(i, gplan.base)
            w.writerow([i] + [repr(lr) for lr, _ in rows] + [repr(m)]
                       + [int(fr) for _, fr in rows])
