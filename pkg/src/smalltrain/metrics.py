"""Ranking and comparison metrics: AUC, per-label mean AUC, paired t-test.

AUC uses the Mann-Whitney rank-sum formulation with midranks for ties:

    AUC = (R_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)

where R_pos is the sum of the positive scores' midranks. The paired
t-test computes a two-sided p-value from the Student-t distribution via
a continued-fraction evaluation of the regularized incomplete beta
function, accurate enough in the far tail to report p-values like 1e-8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values all get the mean of their rank range."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Area under the ROC curve; ties contribute half a win."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"auc: scores {scores.shape} and labels {labels.shape} must be equal 1-d")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"auc: need both classes, got {n_pos} positives / {n_neg} negatives")
    r_pos = midranks(scores)[pos].sum()
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class MeanLabelAuc:
    mean: float
    per_label: list[Optional[float]]
    skipped: list[int]  # labels with a single class, excluded from the mean


def mean_label_auc(scored_sets: Sequence[tuple[np.ndarray, np.ndarray]]) -> MeanLabelAuc:
    """Unweighted mean AUC over labels; single-class labels are skipped
    and reported."""
    per_label: list[Optional[float]] = []
    skipped: list[int] = []
    for k, (scores, labels) in enumerate(scored_sets):
        try:
            per_label.append(auc(scores, labels))
        except ValueError:
            per_label.append(None)
            skipped.append(k)
    usable = [a for a in per_label if a is not None]
    if not usable:
        raise ValueError("mean_label_auc: no label has both classes")
    return MeanLabelAuc(mean=sum(usable) / len(usable), per_label=per_label, skipped=skipped)


@dataclass
class TTestResult:
    t: float
    p: float
    degenerate: bool = False  # zero-variance differences with nonzero mean


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test of H0: equal means.

    Differences with zero variance are degenerate: all-zero differences
    give (t=0, p=1); a nonzero constant difference gives p=0 with the
    degenerate flag set.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired_ttest: inputs must be equal-length 1-d, got {a.shape}, {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError(f"paired_ttest: need at least 2 pairs, got {n}")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p=student_t_two_sided(t, n - 1))


def student_t_two_sided(t: float, df: int) -> float:
    """P(|T| >= |t|) for Student-t with df degrees of freedom."""
    if df < 1:
        raise ValueError(f"student_t_two_sided: df must be >= 1, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return reg_inc_beta(df / 2.0, 0.5, x)


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b).

    Continued-fraction evaluation (modified Lentz), switched across
    x = (a+1)/(a+b+2) for convergence; absolute accuracy ~1e-15.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"reg_inc_beta: x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError(f"_betacf: no convergence for a={a}, b={b}, x={x}")
