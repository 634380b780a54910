"""Wilcoxon signed-rank test with an exact null distribution.

Zero differences are dropped. Tied magnitudes get mid-ranks; the exact
distribution is computed over doubled ranks so mid-ranks stay integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

EXACT_MAX_N = 300


@dataclass
class WilcoxonResult:
    statistic: float  # sum of ranks of positive differences
    pvalue: float
    n: int
    method: str


def signed_ranks(d) -> tuple[np.ndarray, np.ndarray]:
    """Mid-ranks of ``|d|`` and the sign mask, zeros removed."""
    d = np.asarray(d, dtype=np.float64)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    return ranks, d > 0


def null_distribution(ranks) -> tuple[np.ndarray, np.ndarray]:
    """Support (as rank sums) and probabilities of W+ under random signs."""
    doubled = np.rint(2 * np.asarray(ranks)).astype(int)
    top = int(doubled.sum())
    prob = np.zeros(top + 1)
    prob[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(prob)
        shifted[r:] = prob[:top + 1 - r]
        prob = 0.5 * prob + 0.5 * shifted
    return np.arange(top + 1) / 2.0, prob


def wilcoxon(d, alternative: str = "two-sided", exact: bool | None = None) -> WilcoxonResult:
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    ranks, positive = signed_ranks(d)
    n = len(ranks)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "exact")
    w = float(ranks[positive].sum())
    if exact is None:
        exact = n <= EXACT_MAX_N
    if exact:
        support, prob = null_distribution(ranks)
        eps = 1e-9
        upper = float(prob[support >= w - eps].sum())
        lower = float(prob[support <= w + eps].sum())
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - (counts ** 3 - counts).sum() / 48.0
        sd = math.sqrt(var)
        upper = float(stats.norm.sf((w - mean - 0.5) / sd))
        lower = float(stats.norm.cdf((w - mean + 0.5) / sd))
        method = "normal"
    if alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        p = min(1.0, 2.0 * min(upper, lower))
    return WilcoxonResult(w, min(1.0, p), n, method)


def bonferroni(pvalues, m: int | None = None) -> list[float]:
    """Multiply by the number of tests (``m`` defaults to ``len(pvalues)``), capped at 1."""
    pvalues = list(pvalues)
    m = len(pvalues) if m is None else m
    return [min(1.0, p * m) for p in pvalues]
