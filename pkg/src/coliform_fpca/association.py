"""Rank correlation, regression and grouping statistics on fitted scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .errors import (
    ConstantPredictor,
    InsufficientData,
    InsufficientOverlap,
    InvalidParams,
    TooFewSites,
    ZeroVariance,
)
from .preprocess import WeeklySeries

# For n <= 6 and |rho| <= 0.8 the t-approximation p-value lies within this
# factor of the exact permutation p-value (both directions), ties included.
T_APPROX_FACTOR = 3.0

P_BIN_FLOOR = 1e-10


class Statistic(str, Enum):
    SPEARMAN_RHO = "spearman_rho"
    R_SQUARED = "r_squared"


@dataclass(frozen=True)
class AssociationResult:
    subject: str
    statistic: Statistic
    value: float
    p_value: float
    n: int
    significant_positive: bool
    p_bin: int | None = None


@dataclass(frozen=True)
class Regression:
    slope: float
    intercept: float
    r_squared: float
    p_value: float
    n: int


@dataclass(frozen=True)
class ExtremaGroups:
    group_high: frozenset[str]
    group_low: frozenset[str]
    q: float = 0.10


def _complete_cases(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InvalidParams(f"length mismatch: {x.shape} vs {y.shape}")
    keep = np.isfinite(x) & np.isfinite(y)
    return x[keep], y[keep]


def _midranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    _, inv, counts = np.unique(v, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    return (upper - (counts - 1) / 2.0)[inv.reshape(-1)]


def _t_pvalue(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * special.stdtr(n - 2, -abs(t))))


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Spearman rho (Pearson on midranks) with a two-sided t-approximation p-value.

    Pairs with a missing (NaN) value on either side are dropped first.
    """
    x, y = _complete_cases(x, y)
    n = len(x)
    if n < 3:
        raise InsufficientData(f"need at least 3 complete pairs, got {n}")
    rx, ry = _midranks(x), _midranks(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise ZeroVariance("all values tied on one side")
    dx, dy = rx - rx.mean(), ry - ry.mean()
    rho = float(np.sum(dx * dy) / math.sqrt(float(np.sum(dx * dx) * np.sum(dy * dy))))
    rho = max(-1.0, min(1.0, rho))
    return rho, _t_pvalue(rho, n)


def linreg_r2(x: Sequence[float], y: Sequence[float]) -> Regression:
    """Ordinary least squares of y on x with a two-sided slope t-test.

    A constant response gives r_squared = 0 and p = 1; an exact fit with
    varying y gives p = 0.
    """
    x, y = _complete_cases(x, y)
    n = len(x)
    if n < 3:
        raise InsufficientData(f"need at least 3 complete pairs, got {n}")
    if np.ptp(x) == 0:
        raise ConstantPredictor("x is constant")
    xc = x - x.mean()
    sxx = float(np.sum(xc * xc))
    slope = float(np.sum(xc * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    sse = float(np.sum(resid * resid))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return Regression(slope, intercept, 0.0, 1.0, n)
    r2 = min(1.0, max(0.0, 1.0 - sse / sst))
    se = math.sqrt(sse / (n - 2) / sxx)
    if se == 0.0 or r2 == 1.0:
        p = 0.0
    else:
        p = float(min(1.0, 2.0 * special.stdtr(n - 2, -abs(slope / se))))
    return Regression(slope, intercept, r2, p, n)


def percentiles(scores: Mapping[str, float]) -> dict[str, float]:
    """Rank percentile in [0, 100]: 100 * (midrank - 1) / (n - 1)."""
    ids = sorted(scores)
    if not ids:
        return {}
    if len(ids) == 1:
        return {ids[0]: 50.0}
    ranks = _midranks(np.array([scores[s] for s in ids], dtype=float))
    return {s: float(100.0 * (r - 1.0) / (len(ids) - 1)) for s, r in zip(ids, ranks)}


def decile_bins(
    scores: Sequence[float] | Mapping[str, float],
    site_ids: Sequence[str] | None = None,
    n_bins: int = 10,
) -> list[int] | dict[str, int]:
    """Split sites into ``n_bins`` contiguous equal-size groups by increasing score.

    Ties are ordered by site id (or by input position when no ids are given).
    Sizes differ by at most one and the larger groups are the top bins.
    A mapping in gives a mapping out; a sequence gives labels in input order.
    """
    if isinstance(scores, Mapping):
        ids = list(scores)
        labels = decile_bins([scores[s] for s in ids], ids, n_bins)
        return dict(zip(ids, labels))
    values = [float(v) for v in scores]
    n = len(values)
    if n_bins < 1:
        raise InvalidParams("n_bins must be positive")
    if n < n_bins:
        raise TooFewSites(f"{n} sites cannot fill {n_bins} bins")
    keys = site_ids if site_ids is not None else [f"{i:012d}" for i in range(n)]
    order = sorted(range(n), key=lambda i: (values[i], keys[i]))
    base, extra = divmod(n, n_bins)
    sizes = [base] * (n_bins - extra) + [base + 1] * extra
    labels = [0] * n
    pos = 0
    for b, size in enumerate(sizes, start=1):
        for i in order[pos:pos + size]:
            labels[i] = b
        pos += size
    return labels


def extrema_groups(
    fpc1: Mapping[str, float],
    fpc2: Mapping[str, float],
    q: float = 0.10,
) -> ExtremaGroups:
    """Sites in the global top-q of FPC1 that are also in the top-q (high)
    or bottom-q (low) of FPC2.

    Quantile sets are the top and bottom bins of ``decile_bins`` with
    ``round(1 / q)`` bins over the whole population.
    """
    if set(fpc1) != set(fpc2):
        raise InvalidParams("FPC1 and FPC2 scores cover different sites")
    n_bins = round(1.0 / q)
    if n_bins < 2 or abs(n_bins * q - 1.0) > 1e-9:
        raise InvalidParams(f"q must be 1/m for an integer m >= 2, got {q}")
    b1 = decile_bins(dict(fpc1), n_bins=n_bins)
    b2 = decile_bins(dict(fpc2), n_bins=n_bins)
    top1 = {s for s, b in b1.items() if b == n_bins}
    high = frozenset(s for s in top1 if b2[s] == n_bins)
    low = frozenset(s for s in top1 if b2[s] == 1)
    return ExtremaGroups(high, low, q)


@dataclass(frozen=True)
class MaxRow:
    site_id: str
    max_value: float
    week_of_max: int
    group: str


@dataclass(frozen=True)
class MaxVsFpc1:
    result: AssociationResult
    regression: Regression
    table: list[MaxRow]


def max_vs_fpc1(
    series: Mapping[str, WeeklySeries],
    fpc1: Mapping[str, float],
    alpha: float = 0.05,
    n_bins: int = 10,
) -> MaxVsFpc1:
    """Regress each site's maximum weekly value on its FPC1 percentile.

    The table lists (max, week of max) for sites in the bottom and top bins.
    """
    ids = sorted(fpc1)
    empty = [s for s in ids if not len(series[s])]
    if empty:
        raise InsufficientData(f"scored sites without observations: {empty[:5]}")
    pct = percentiles({s: fpc1[s] for s in ids})
    peaks = {}
    for s in ids:
        weeks = list(series[s].values)
        vals = series[s].array
        j = int(np.argmax(vals))
        peaks[s] = (float(vals[j]), int(weeks[j]))
    reg = linreg_r2([pct[s] for s in ids], [peaks[s][0] for s in ids])
    result = AssociationResult(
        "global", Statistic.R_SQUARED, reg.r_squared, reg.p_value, reg.n, reg.slope > 0 and reg.p_value < alpha
    )
    table = []
    if len(ids) >= n_bins:
        bins = decile_bins({s: fpc1[s] for s in ids}, n_bins=n_bins)
        for s in ids:
            if bins[s] in (1, n_bins):
                table.append(MaxRow(s, peaks[s][0], peaks[s][1], "top" if bins[s] == n_bins else "bottom"))
    return MaxVsFpc1(result, reg, table)


def p_value_bin(p: float, alpha: float = 0.05, floor: float = P_BIN_FLOOR, n_bins: int = 10) -> int | None:
    """Bin 1..n_bins for a significant p-value, equal widths in log10 between
    ``alpha`` and ``floor``; everything below ``floor`` is bin ``n_bins``.
    Returns None when ``p >= alpha``."""
    if not 0.0 <= p <= 1.0:
        raise InvalidParams(f"p-value {p} outside [0, 1]")
    if p >= alpha:
        return None
    if p < floor:
        return n_bins
    width = (math.log10(alpha) - math.log10(floor)) / n_bins
    b = 1 + int(math.floor((math.log10(alpha) - math.log10(p)) / width))
    return min(n_bins, max(1, b))


def site_correlation(
    site_id: str,
    curve: Mapping[int, float],
    covariate: Mapping[int, float],
    alpha: float = 0.05,
) -> AssociationResult:
    weeks = sorted(set(curve) & set(covariate))
    if len(weeks) < 3:
        raise InsufficientOverlap(site_id, len(weeks))
    rho, p = spearman([curve[w] for w in weeks], [covariate[w] for w in weeks])
    sig = rho > 0 and p < alpha
    return AssociationResult(
        site_id, Statistic.SPEARMAN_RHO, rho, p, len(weeks), sig, p_value_bin(p, alpha) if sig else None
    )


def site_covariate_correlation(
    curves: Mapping[str, Mapping[int, float]],
    covariates: Mapping[str, Mapping[int, float]],
    alpha: float = 0.05,
) -> list[AssociationResult]:
    """Per-site Spearman correlation between two weekly curves on their common weeks.

    Every site in ``curves`` must have a covariate curve. Sites whose
    correlation is constant on one side (ZeroVariance) are reported with
    rho = 0 and p = 1.
    """
    out = []
    for site_id in sorted(curves):
        if site_id not in covariates:
            raise InsufficientOverlap(site_id, 0)
        try:
            out.append(site_correlation(site_id, curves[site_id], covariates[site_id], alpha))
        except ZeroVariance:
            n = len(set(curves[site_id]) & set(covariates[site_id]))
            out.append(AssociationResult(site_id, Statistic.SPEARMAN_RHO, 0.0, 1.0, n, False, None))
    return out


def significant_positive(results: Sequence[AssociationResult]) -> list[AssociationResult]:
    return [r for r in results if r.significant_positive]
