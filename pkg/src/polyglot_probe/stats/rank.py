"""Rank statistics: Mann-Whitney U, Spearman, Cohen's d, Bonferroni."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats as sps

from polyglot_probe.errors import InputError

ALTERNATIVES = ("two-sided", "greater", "less")
EXACT_MAX_N = 14


@dataclass
class StatResult:
    statistic: float
    p_value: float
    method: str
    n_x: int
    n_y: int
    alpha: float
    significant: bool

    def to_dict(self) -> dict:
        return asdict(self)


def bonferroni(alpha: float, m: int) -> float:
    if m < 1:
        raise InputError(f"number of comparisons must be >= 1, got {m}")
    return alpha / m


def rankdata(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties given their average rank."""
    a = np.asarray(values, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    sorted_a = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@lru_cache(maxsize=None)
def _u_counts(n: int, m: int) -> tuple[int, ...]:
    """Number of rank arrangements giving each U in 0..n*m (no ties)."""
    if n == 0 or m == 0:
        return (1,)
    # f(n, m, u) = f(n-1, m, u-m) + f(n, m-1, u)
    a = _u_counts(n - 1, m)
    b = _u_counts(n, m - 1)
    out = [0] * (n * m + 1)
    for u, c in enumerate(a):
        out[u + m] += c
    for u, c in enumerate(b):
        out[u] += c
    return tuple(out)


def exact_u_pvalue(u: int, n: int, m: int, alternative: str) -> float:
    counts = _u_counts(n, m)
    total = sum(counts)
    le = Fraction(sum(counts[: u + 1]), total)
    ge = Fraction(sum(counts[u:]), total)
    if alternative == "less":
        p = le
    elif alternative == "greater":
        p = ge
    else:
        p = min(Fraction(1), 2 * min(le, ge))
    return float(p)


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(
    x: Sequence[float],
    y: Sequence[float],
    alternative: str = "two-sided",
    alpha: float = 0.05,
) -> StatResult:
    """Mann-Whitney U test of ``x`` against ``y``.

    The statistic is U for ``x``: the number of (x, y) pairs with x > y, ties
    counting one half. ``greater`` tests whether x tends to exceed y.
    Tie-free samples with ``len(x) + len(y) <= 14`` get the exact null
    distribution; otherwise a normal approximation with tie and continuity
    corrections is used.
    """
    if alternative not in ALTERNATIVES:
        raise InputError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise InputError("Mann-Whitney U needs two non-empty samples")
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    has_ties = len(np.unique(pooled)) < len(pooled)

    if not has_ties and n + m <= EXACT_MAX_N:
        p = exact_u_pvalue(int(round(u)), n, m, alternative)
        method = "exact"
    else:
        N = n + m
        _, t = np.unique(pooled, return_counts=True)
        tie_term = float(np.sum(t**3 - t)) / (N * (N - 1))
        var = n * m / 12.0 * ((N + 1) - tie_term)
        mu = n * m / 2.0
        if var <= 0:
            p = 1.0
        else:
            sd = math.sqrt(var)
            if alternative == "greater":
                p = _norm_sf((u - mu - 0.5) / sd)
            elif alternative == "less":
                p = _norm_sf((mu - u - 0.5) / sd)
            else:
                z = max(abs(u - mu) - 0.5, 0.0) / sd
                p = min(1.0, 2.0 * _norm_sf(z))
        method = "normal-approx"
    return StatResult(u, p, method, n, m, alpha, p < alpha)


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Spearman rho with average ranks; two-sided p from the t approximation with n-2 df."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise InputError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 3:
        raise InputError("Spearman correlation needs at least 3 pairs")
    rx, ry = rankdata(x), rankdata(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0:
        raise InputError("Spearman correlation undefined for constant input")
    rho = max(-1.0, min(1.0, float(dx @ dy) / denom))
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1 - rho * rho))
    p = float(2 * sps.t.sf(abs(t), n - 2))
    return rho, min(1.0, p)


def cohens_d(x: Sequence[float], y: Sequence[float]) -> float:
    """(mean(x) - mean(y)) / pooled sd, variances with n-1 denominators."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 < 2 or n2 < 2:
        raise InputError("Cohen's d needs at least 2 values per group")
    pooled = ((n1 - 1) * x.var(ddof=1) + (n2 - 1) * y.var(ddof=1)) / (n1 + n2 - 2)
    if pooled <= 0:
        raise InputError("Cohen's d undefined: pooled variance is zero")
    return float((x.mean() - y.mean()) / math.sqrt(pooled))
