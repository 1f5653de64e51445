"""Exclusion rules and weekly pooling of raw samples.

Every sample is folded onto a single 52-week year: week = ceil(doy / 7),
with days 365 and 366 absorbed into week 52. Weekly values are arithmetic
means across all years; bacteria counts are then log10 transformed,
covariates are not.
"""

from __future__ import annotations

import datetime as dt
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import NonPositiveValue, UnmappedSite
from .store import CovariateRecord, Province, SampleRecord

N_WEEKS = 52

PROVINCE_WINDOWS: Mapping[Province, tuple[int, int]] = MappingProxyType(
    {
        Province.BC: (1, 52),
        Province.QC: (19, 45),
        Province.NB: (19, 45),
        Province.PE: (19, 45),
        Province.NS: (19, 45),
        Province.NL: (20, 38),
    }
)


class Scale(str, Enum):
    LOG10_COUNT = "log10_count"
    RAW_COVARIATE = "raw_covariate"
    RAW_COUNT = "raw_count"


class Disposition(str, Enum):
    RETAINED = "retained"
    NO_POST_CUTOFF_DATA = "no_post_cutoff_data"
    BELOW_DETECTION = "below_detection"
    GAP_TOO_LONG = "gap_too_long"


@dataclass(frozen=True)
class WeeklySeries:
    """Sparse weekly values of one site (or one covariate location)."""

    site_id: str
    window: tuple[int, int]
    values: Mapping[int, float]
    scale: Scale = Scale.RAW_COUNT

    def __post_init__(self) -> None:
        first, last = self.window
        if not 1 <= first <= last <= N_WEEKS:
            raise ValueError(f"bad window {self.window}")
        clean = {}
        for week in sorted(self.values):
            v = float(self.values[week])
            if not first <= week <= last:
                raise ValueError(f"week {week} outside window {self.window}")
            if not math.isfinite(v):
                raise ValueError(f"non-finite value at week {week}")
            clean[int(week)] = v
        object.__setattr__(self, "values", MappingProxyType(clean))
        object.__setattr__(self, "scale", Scale(self.scale))

    @property
    def weeks(self) -> np.ndarray:
        return np.fromiter(self.values.keys(), dtype=float, count=len(self.values))

    @property
    def array(self) -> np.ndarray:
        return np.fromiter(self.values.values(), dtype=float, count=len(self.values))

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class ExclusionReport:
    dispositions: dict[str, Disposition] = field(default_factory=dict)

    def counts(self) -> dict[Disposition, int]:
        tally = Counter(self.dispositions.values())
        return {d: tally.get(d, 0) for d in Disposition}

    def retained(self) -> list[str]:
        return sorted(s for s, d in self.dispositions.items() if d is Disposition.RETAINED)


def week_of(date: dt.date) -> int:
    doy = date.timetuple().tm_yday
    return min(math.ceil(doy / 7), N_WEEKS)


def apply_exclusions(
    samples: Iterable[SampleRecord],
    cutoff_year: int = 1999,
    detection_limit: float = 2.0,
) -> tuple[list[SampleRecord], ExclusionReport]:
    """Drop sites with nothing dated in or after ``cutoff_year`` and sites
    whose every remaining count is strictly below ``detection_limit``.

    Retained sites keep only their post-cutoff samples.
    """
    by_site: dict[str, list[SampleRecord]] = defaultdict(list)
    for r in samples:
        by_site[r.site_id].append(r)
    report = ExclusionReport()
    kept: list[SampleRecord] = []
    for site_id in sorted(by_site):
        recent = [r for r in by_site[site_id] if r.date.year >= cutoff_year]
        if not recent:
            report.dispositions[site_id] = Disposition.NO_POST_CUTOFF_DATA
        elif all(r.fc_count < detection_limit for r in recent):
            report.dispositions[site_id] = Disposition.BELOW_DETECTION
        else:
            report.dispositions[site_id] = Disposition.RETAINED
            kept.extend(recent)
    return kept, report


def _pool(pairs: Iterable[tuple[dt.date, float]]) -> dict[int, float]:
    sums: dict[int, float] = defaultdict(float)
    counts: Counter = Counter()
    for date, value in pairs:
        w = week_of(date)
        sums[w] += value
        counts[w] += 1
    return {w: sums[w] / counts[w] for w in sorted(sums)}


def pool_to_weekly(samples: Sequence[SampleRecord], site_id: str | None = None) -> WeeklySeries:
    """Weekly arithmetic mean of raw counts pooled across years."""
    if site_id is None:
        ids = {r.site_id for r in samples}
        if len(ids) > 1:
            raise ValueError(f"samples from several sites: {sorted(ids)}")
        site_id = ids.pop() if ids else ""
    # sorting makes the floating-point sums independent of input order
    pairs = sorted((r.date.timetuple().tm_yday, r.fc_count, r.date) for r in samples)
    return WeeklySeries(site_id, (1, N_WEEKS), _pool((d, v) for _, v, d in pairs), Scale.RAW_COUNT)


def log_transform(series: WeeklySeries) -> WeeklySeries:
    out = {}
    for week, v in series.values.items():
        if v <= 0:
            raise NonPositiveValue(week, v, series.site_id)
        out[week] = math.log10(v)
    return WeeklySeries(series.site_id, series.window, out, Scale.LOG10_COUNT)


def window_subset(series: WeeklySeries, province: Province | str) -> WeeklySeries:
    first, last = PROVINCE_WINDOWS[Province(province)]
    kept = {w: v for w, v in series.values.items() if first <= w <= last}
    return WeeklySeries(series.site_id, (first, last), kept, series.scale)


def longest_gap(series: WeeklySeries) -> int:
    """Longest run of consecutive missing weeks inside the series window."""
    first, last = series.window
    longest = run = 0
    for week in range(first, last + 1):
        if week in series.values:
            run = 0
        else:
            run += 1
            longest = max(longest, run)
    return longest


def gap_filter(series: WeeklySeries, max_gap: int = 4) -> bool:
    """True to keep the series, False to drop it."""
    return longest_gap(series) < max_gap


def cumulative_precip(
    precipitation: Sequence[CovariateRecord],
    samples: Sequence[SampleRecord],
    site_to_location: Mapping[str, str],
    horizon_days: int = 5,
) -> tuple[dict[str, WeeklySeries], int]:
    """Per-site weekly means of the precipitation summed over the
    ``horizon_days`` days before each sampling date (the sampling day itself
    excluded).

    Days without a precipitation record contribute 0. Returns the series and
    the number of zero-filled days so callers can log it.
    """
    daily: dict[str, dict[dt.date, float]] = defaultdict(lambda: defaultdict(float))
    for r in precipitation:
        daily[r.location_id][r.date] += r.value

    by_site: dict[str, list[SampleRecord]] = defaultdict(list)
    for s in samples:
        by_site[s.site_id].append(s)

    out: dict[str, WeeklySeries] = {}
    filled = 0
    for site_id in sorted(by_site):
        if site_id not in site_to_location:
            raise UnmappedSite(site_id, "precipitation")
        record = daily.get(site_to_location[site_id], {})
        pairs = []
        for s in sorted(by_site[site_id], key=lambda r: r.date):
            total = 0.0
            for lag in range(1, horizon_days + 1):
                day = s.date - dt.timedelta(days=lag)
                if day in record:
                    total += record[day]
                else:
                    filled += 1
            pairs.append((s.date, total))
        out[site_id] = WeeklySeries(site_id, (1, N_WEEKS), _pool(pairs), Scale.RAW_COVARIATE)
    return out, filled


def weekly_flow(flows: Sequence[CovariateRecord]) -> dict[str, WeeklySeries]:
    """Weekly mean flow per river, pooled across years, no log."""
    by_location: dict[str, list[CovariateRecord]] = defaultdict(list)
    for r in flows:
        by_location[r.location_id].append(r)
    return {
        loc: WeeklySeries(
            loc,
            (1, N_WEEKS),
            _pool((r.date, r.value) for r in sorted(recs, key=lambda r: (r.date, r.value))),
            Scale.RAW_COVARIATE,
        )
        for loc, recs in sorted(by_location.items())
    }


def preprocess_sites(
    samples: Sequence[SampleRecord],
    provinces: Mapping[str, Province],
    cutoff_year: int = 1999,
    detection_limit: float = 2.0,
    max_gap: int = 4,
) -> tuple[dict[str, WeeklySeries], ExclusionReport]:
    """Full bacteria path: exclusions, weekly pooling, log10, province window
    and gap filter. ``provinces`` maps every site to its province."""
    kept, report = apply_exclusions(samples, cutoff_year, detection_limit)
    by_site: dict[str, list[SampleRecord]] = defaultdict(list)
    for r in kept:
        by_site[r.site_id].append(r)
    series: dict[str, WeeklySeries] = {}
    for site_id in sorted(by_site):
        pooled = pool_to_weekly(by_site[site_id], site_id)
        s = window_subset(log_transform(pooled), provinces[site_id])
        if gap_filter(s, max_gap):
            series[site_id] = s
        else:
            report.dispositions[site_id] = Disposition.GAP_TOO_LONG
    return series, report
