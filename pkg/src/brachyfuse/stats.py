"""Paired nonparametric statistics: exact Wilcoxon signed-rank test and
Spearman rank correlation.

The Wilcoxon p-value is exact (full null distribution of the signed-rank
sum), not a normal approximation; sample sizes here are tiny (n = 8), so
asymptotics would be wrong by a lot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from brachyfuse.errors import InputError

# two-sided critical values for |rho|, classic Spearman tables
SPEARMAN_THRESHOLDS = {8: {0.05: 0.738, 0.01: 0.881}}


@dataclass(frozen=True)
class WilcoxonResult:
    n_effective: int
    w_plus: float
    w_minus: float
    w: float
    p_value: float
    significant_at_0_05: bool

    def as_dict(self) -> dict:
        return {
            "n_effective": self.n_effective,
            "w_plus": self.w_plus,
            "w_minus": self.w_minus,
            "w": self.w,
            "p_value": self.p_value,
            "significant_at_0_05": self.significant_at_0_05,
        }


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    n: int
    alpha: Optional[float] = None
    threshold: Optional[float] = None
    exceeds_threshold: Optional[bool] = None

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "n": self.n,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "exceeds_threshold": self.exceeds_threshold,
        }


def _signed_rank_distribution(doubled_ranks: np.ndarray) -> np.ndarray:
    """Counts of sign assignments per value of 2*W_plus.

    Ranks arrive doubled so midranks (x.5 from ties) become integers;
    counts[s] = number of sign vectors with 2*W_plus == s.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(
    pairs: Sequence[tuple[float, float]], zero_method: str = "wilcox"
) -> WilcoxonResult:
    """Exact two-sided Wilcoxon signed-rank test on paired measurements.

    Differences are b - a per pair. ``zero_method="wilcox"`` (default)
    drops zero differences before ranking; ``"pratt"`` ranks them along
    with the rest and then discards their contribution. Supports up to
    n_effective = 20 (exact distribution via dynamic programming).
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
        raise InputError("pairs must be a non-empty list of (a, b) tuples")
    if zero_method not in ("wilcox", "pratt"):
        raise InputError(f"unknown zero_method {zero_method!r}")
    diffs = arr[:, 1] - arr[:, 0]

    if zero_method == "wilcox":
        diffs = diffs[diffs != 0.0]
        ranks = rankdata(np.abs(diffs)) if len(diffs) else np.array([])
    else:
        all_ranks = rankdata(np.abs(diffs))
        nonzero = diffs != 0.0
        ranks = all_ranks[nonzero]
        diffs = diffs[nonzero]

    n_eff = len(diffs)
    if n_eff == 0:
        return WilcoxonResult(0, 0.0, 0.0, 0.0, 1.0, False)
    if n_eff > 20:
        raise InputError(f"exact test supports n_effective <= 20, got {n_eff}")

    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    w = min(w_plus, w_minus)

    doubled = np.round(2.0 * ranks).astype(np.int64)
    counts = _signed_rank_distribution(doubled)
    total = float(2.0**n_eff)
    threshold = int(round(2.0 * w))
    tail = float(counts[: threshold + 1].sum())
    p = min(1.0, 2.0 * tail / total)
    return WilcoxonResult(n_eff, w_plus, w_minus, w, p, p < 0.05)


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> SpearmanResult:
    """Spearman rank correlation with average ranks on ties.

    Uses the classic 1 - 6*sum(d^2)/(n(n^2-1)) form when both sides are
    tie-free; falls back to Pearson correlation of the ranks otherwise.
    A tabulated two-sided significance threshold is attached for n = 8
    (alpha = 0.01); other n report rho without a verdict.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise InputError("x and y must be 1-D sequences of equal length")
    n = len(xa)
    if n < 3:
        raise InputError(f"need at least 3 pairs, got {n}")

    rx = rankdata(xa)
    ry = rankdata(ya)
    has_ties = len(np.unique(xa)) < n or len(np.unique(ya)) < n
    if has_ties:
        rho = float(np.corrcoef(rx, ry)[0, 1])
    else:
        d = rx - ry
        rho = float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1.0)))

    table = SPEARMAN_THRESHOLDS.get(n)
    if table:
        alpha = 0.01
        thr = table[alpha]
        return SpearmanResult(rho, n, alpha, thr, abs(rho) > thr)
    return SpearmanResult(rho, n)
