"""Welch's unequal-variance t-test with a self-contained Student-t CDF.

The CDF goes through the regularized incomplete beta function, evaluated by
the standard continued fraction (modified Lentz iteration). For t >= 0 and
df degrees of freedom::

    F(t; df) = 1 - 0.5 * I_x(df/2, 1/2),  x = df / (df + t^2)

and by symmetry F(-t) = 1 - F(t). Two-sided p-values follow directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import DataError, DegenerateSamplesError, ValidationError

_BETACF_MAX_ITER = 300
_BETACF_EPS = 1.0e-15
_BETACF_TINY = 1.0e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise DataError(f"incomplete beta continued fraction failed to converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValidationError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"incomplete beta argument outside [0, 1]: {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    """Student-t cumulative distribution function."""
    if not math.isfinite(t):
        raise ValidationError(f"t must be finite, got {t}")
    if not (df > 0 and math.isfinite(df)):
        raise ValidationError(f"degrees of freedom must be positive, got {df}")
    x = df / (df + t * t)
    tail = 0.5 * betainc_regularized(df / 2.0, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float
    significant: bool
    n_a: int
    n_b: int
    mean_a: float
    mean_b: float


def welch_t(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> WelchResult:
    """Welch's two-sample t-test with unbiased variances and a two-sided p.

    Degrees of freedom follow Welch-Satterthwaite. Two zero-variance samples
    with equal means give t = 0, p = 1; with different means there is no
    defined statistic and DegenerateSamplesError is raised.
    """
    n_a, n_b = len(a), len(b)
    if n_a < 2 or n_b < 2:
        raise ValidationError(f"welch_t needs at least 2 values per sample, got {n_a} and {n_b}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    mean_a = math.fsum(a) / n_a
    mean_b = math.fsum(b) / n_b
    var_a = math.fsum((v - mean_a) ** 2 for v in a) / (n_a - 1)
    var_b = math.fsum((v - mean_b) ** 2 for v in b) / (n_b - 1)
    sa = var_a / n_a
    sb = var_b / n_b
    if sa + sb == 0.0:
        if mean_a == mean_b:
            return WelchResult(0.0, float(n_a + n_b - 2), 1.0, False, n_a, n_b, mean_a, mean_b)
        raise DegenerateSamplesError(
            "both samples have zero variance with different means; t is undefined"
        )
    t = (mean_a - mean_b) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (n_a - 1) + sb * sb / (n_b - 1))
    p = 2.0 * (1.0 - t_cdf(abs(t), df))
    p = min(max(p, 0.0), 1.0)
    return WelchResult(t, df, p, p < alpha, n_a, n_b, mean_a, mean_b)


@dataclass(frozen=True)
class TestCell:
    """One pairwise comparison for one indicator; ``result`` is None when the
    test could not be computed, with the reason recorded."""

    result: Optional[WelchResult]
    reason: Optional[str] = None


def pairwise_tests(
    samples: Mapping[str, Mapping[str, Sequence[float]]],
    pairs: Sequence[Tuple[str, str]],
    indicators: Sequence[str],
    alpha: float = 0.05,
    bonferroni: bool = False,
) -> List[Dict]:
    """Run Welch's test for each (category pair, indicator) combination.

    ``samples`` maps category -> indicator -> per-zone values. Pairs with a
    missing or undersized side, or with both sides constant at different
    levels, are reported as not computable rather than raised. With
    ``bonferroni`` the significance threshold is alpha divided by the number
    of computed tests in this matrix.
    """
    rows: List[Dict] = []
    raw: List[Tuple[Dict, str, Optional[WelchResult], Optional[str]]] = []
    n_computed = 0
    for cat_a, cat_b in pairs:
        row: Dict = {"a": cat_a, "b": cat_b, "cells": {}}
        for ind in indicators:
            va = list(samples.get(cat_a, {}).get(ind, ()))
            vb = list(samples.get(cat_b, {}).get(ind, ()))
            if len(va) < 2 or len(vb) < 2:
                raw.append((row, ind, None, f"undersized sample ({len(va)} vs {len(vb)})"))
                continue
            try:
                res = welch_t(va, vb, alpha=alpha)
            except DegenerateSamplesError:
                raw.append((row, ind, None, "degenerate: both samples constant, means differ"))
                continue
            raw.append((row, ind, res, None))
            n_computed += 1
        rows.append(row)
    threshold = alpha / n_computed if (bonferroni and n_computed > 0) else alpha
    for row, ind, res, reason in raw:
        if res is None:
            row["cells"][ind] = TestCell(None, reason)
        else:
            adjusted = WelchResult(
                res.t, res.df, res.p, res.p < threshold, res.n_a, res.n_b, res.mean_a, res.mean_b
            )
            row["cells"][ind] = TestCell(adjusted, None)
    return rows
