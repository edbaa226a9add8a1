"""Classification metrics, partition agreement and the paired t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import StatisticsError, ValidationError

THRESHOLD = 0.5


@dataclass
class Metrics:
    accuracy: float
    per_task_accuracy: list[float]
    per_task_f1: list[float]
    macro_f1: float

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "per_task_accuracy": self.per_task_accuracy,
                "per_task_f1": self.per_task_f1, "macro_f1": self.macro_f1}


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if tp == 0 else 2.0 * tp / denom


def compute_metrics(predictions, labels) -> Metrics:
    """Accuracy and F1 with predictions thresholded at 0.5 (``>= 0.5`` is positive)."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim == 1:
        p = p[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if p.shape != y.shape:
        raise ValidationError(f"predictions {p.shape} and labels {y.shape} differ in shape")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be binary")
    hat = p >= THRESHOLD
    pos = y == 1
    tp = np.sum(hat & pos, axis=0)
    fp = np.sum(hat & ~pos, axis=0)
    fn = np.sum(~hat & pos, axis=0)
    correct = np.sum(hat == pos, axis=0)
    n = y.shape[0]
    per_acc = [float(c) / n for c in correct]
    per_f1 = [f1_score(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)]
    return Metrics(float(correct.sum()) / y.size, per_acc, per_f1, float(np.mean(per_f1)))


def adjusted_rand_index(a: Sequence[int], b: Sequence[int]) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError("partitions must label the same items")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    pairs = lambda x: x * (x - 1) / 2.0  # noqa: E731
    index = pairs(table).sum()
    row = pairs(table.sum(axis=1)).sum()
    col = pairs(table.sum(axis=0)).sum()
    total = pairs(n)
    expected = row * col / total if total else 0.0
    max_index = (row + col) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


# --------------------------------------------------------------------------
# Student t distribution through the regularized incomplete beta function


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    """Continued fraction for I_x(a, b), evaluated with the modified Lentz method."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise StatisticsError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if df <= 0:
        raise StatisticsError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test on a - b. Returns (t statistic, p value)."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise StatisticsError(f"paired samples need equal 1-D lengths, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise StatisticsError("paired t-test needs at least two pairs")
    d = a - b
    if np.all(d == 0):
        return 0.0, 1.0
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0 or sd <= 1e-14 * abs(mean):
        raise StatisticsError("differences have zero variance; t statistic undefined")
    t = float(mean / (sd / math.sqrt(n)))
    return t, t_two_sided_p(t, n - 1)
