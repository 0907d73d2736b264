"""Evaluation metrics: weighted F1, Pearson r with a two-sided t-test p-value.

The p-value route goes through a hand-written regularized incomplete beta
function (modified Lentz continued fraction) so the package has no runtime
dependency beyond numpy; scipy is used only as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_BETA_TOL = 1e-10
_BETA_MAX_ITER = 500
_TINY = 1e-300


class UndefinedCorrelationError(ValueError):
    """Raised when r is undefined: fewer than 3 points or a constant input."""


def weighted_f1(y_true, y_pred) -> float:
    """F1 per class, averaged with class-support weights.

    A class with zero predicted or zero true positives contributes an F1 of
    0; classes absent from ``y_true`` carry no weight.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(
            f"y_true and y_pred must be equal-length 1-D arrays, "
            f"got {y_true.shape} and {y_pred.shape}"
        )
    if y_true.size == 0:
        raise ValueError("cannot score empty label arrays")

    classes = np.unique(np.concatenate([y_true, y_pred]))
    total = y_true.size
    score = 0.0
    for cls in classes:
        support = int((y_true == cls).sum())
        if support == 0:
            continue
        tp = int(((y_true == cls) & (y_pred == cls)).sum())
        fp = int(((y_true != cls) & (y_pred == cls)).sum())
        fn = int(((y_true == cls) & (y_pred != cls)).sum())
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom > 0 else 0.0
        score += f1 * (support / total)
    return float(score)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_TOL:
            return h
    raise RuntimeError(
        f"incomplete beta continued fraction failed to converge for a={a}, b={b}, x={x}"
    )


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # The continued fraction converges fast only below the distribution mode;
    # above it, use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a).
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if not math.isfinite(t):
        raise ValueError(f"t statistic must be finite, got {t}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class CorrelationRecord:
    """Pearson r with its t statistic and two-sided p-value."""

    r: float
    p_value: float
    n: int
    t_stat: float
    df: int


def pearson(x, y) -> CorrelationRecord:
    """Pearson correlation with a two-sided significance test.

    Requires at least 3 paired finite values and non-constant inputs;
    anything else raises :class:`UndefinedCorrelationError`.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(
            f"inputs must be equal-length 1-D arrays, got {x.shape} and {y.shape}"
        )
    n = x.size
    if n < 3:
        raise UndefinedCorrelationError(
            f"need at least 3 paired observations, got {n}"
        )
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("inputs contain non-finite values")

    # Element equality, not zero variance: summation noise keeps the variance
    # of n identical floats slightly above zero.
    if (x == x[0]).all() or (y == y[0]).all():
        raise UndefinedCorrelationError(
            "correlation is undefined for a constant input"
        )
    xc = x - x.mean()
    yc = y - y.mean()
    ssx = float(xc @ xc)
    ssy = float(yc @ yc)
    if ssx == 0.0 or ssy == 0.0:
        raise UndefinedCorrelationError(
            "correlation is undefined for a constant input"
        )
    # sqrt of the product (not the product of sqrts) so that exactly
    # collinear inputs come out at exactly +/-1.
    r = float(xc @ yc) / math.sqrt(ssx * ssy)
    r = max(-1.0, min(1.0, r))

    df = n - 2
    if abs(r) == 1.0:
        return CorrelationRecord(r=r, p_value=0.0, n=n, t_stat=math.inf, df=df)
    t = r * math.sqrt(df / (1.0 - r * r))
    p = student_t_two_sided_p(t, df)
    return CorrelationRecord(r=r, p_value=p, n=n, t_stat=t, df=df)
