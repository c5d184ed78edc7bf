"""Paired and two-sample t-tests with Bonferroni adjustment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_raw: float
    p_adjusted: float
    significant: bool
    degenerate: bool = False


def paired_ttest_bonferroni(a, b, n_comparisons: int = 1, alpha: float = 0.05) -> TTestResult:
    """Two-sided paired t-test on a - b; p multiplied by ``n_comparisons``, capped at 1.

    Zero variance of the differences is flagged as degenerate: t = 0, p = 1
    when all differences vanish, otherwise t = +-inf, p = 0.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    if len(a) < 2:
        raise ValueError("need at least two pairs")
    if n_comparisons < 1:
        raise ValueError("n_comparisons must be >= 1")
    d = a - b
    if np.all(d == d[0]):
        t, p = (0.0, 1.0) if d[0] == 0 else (float(np.sign(d[0]) * np.inf), 0.0)
        degenerate = True
    else:
        res = stats.ttest_rel(a, b)
        t, p = float(res.statistic), float(res.pvalue)
        degenerate = False
    p_adj = min(1.0, p * n_comparisons)
    return TTestResult(t, p, p_adj, p_adj < alpha, degenerate)


def welch_ttest(a, b) -> tuple[float, float]:
    """Welch t statistic and two-sided p with Welch-Satterthwaite dof."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two values")
    if np.array_equal(np.sort(a), np.sort(b)):
        return 0.0, 1.0
    res = stats.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)
