"""CSV reading and writing of intermediate and final tables."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .association import AssociationResult, ExtremaGroups, MaxRow
from .preprocess import ExclusionReport, Scale, WeeklySeries

WEEKLY_COLUMNS = ("site_id", "week", "value", "scale")
EXCLUSION_COLUMNS = ("site_id", "disposition")
SCORE_COLUMNS = ("site_id", "k", "beta", "percentile", "decile_bin")
ASSOCIATION_COLUMNS = ("subject", "statistic", "value", "p_value", "n", "significant_positive", "p_bin", "against")
EXTREMA_COLUMNS = ("site_id", "group")
COVARIATE_SERIES_COLUMNS = ("kind", "series_id", "week", "value")
FVE_COLUMNS = ("k", "eigenvalue", "fve_component", "fve_cumulative", "selected")
MAX_COLUMNS = ("site_id", "group", "max_value", "week_of_max")


def _num(v: float) -> str:
    return repr(float(v))


def _render(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def _write(path: Path | str, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_render(columns, rows), encoding="utf-8")
    return path


def _read(path: Path | str) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_weekly_series(path, series: Mapping[str, WeeklySeries]) -> Path:
    rows = (
        (sid, week, _num(v), s.scale.value)
        for sid, s in sorted(series.items())
        for week, v in s.values.items()
    )
    return _write(path, WEEKLY_COLUMNS, rows)


def read_weekly_series(path, window: tuple[int, int]) -> dict[str, WeeklySeries]:
    values: dict[str, dict[int, float]] = {}
    scales: dict[str, str] = {}
    for row in _read(path):
        values.setdefault(row["site_id"], {})[int(row["week"])] = float(row["value"])
        scales[row["site_id"]] = row["scale"]
    return {sid: WeeklySeries(sid, window, v, Scale(scales[sid])) for sid, v in sorted(values.items())}


def write_exclusion_report(path, report: ExclusionReport) -> Path:
    rows = ((sid, d.value) for sid, d in sorted(report.dispositions.items()))
    return _write(path, EXCLUSION_COLUMNS, rows)


def write_covariate_series(path, series: Mapping[tuple[str, str], WeeklySeries]) -> Path:
    """``series`` is keyed by ``(kind, series_id)``."""
    rows = (
        (kind, sid, week, _num(v))
        for (kind, sid), s in sorted(series.items())
        for week, v in s.values.items()
    )
    return _write(path, COVARIATE_SERIES_COLUMNS, rows)


def read_covariate_series(path) -> dict[tuple[str, str], WeeklySeries]:
    values: dict[tuple[str, str], dict[int, float]] = {}
    for row in _read(path):
        values.setdefault((row["kind"], row["series_id"]), {})[int(row["week"])] = float(row["value"])
    return {key: WeeklySeries(key[1], (1, 52), v, Scale.RAW_COVARIATE) for key, v in sorted(values.items())}


def write_scores(
    path,
    scores: Mapping[str, np.ndarray],
    percentiles: Sequence[Mapping[str, float]],
    bins: Sequence[Mapping[str, int] | None],
) -> Path:
    rows = []
    for sid in sorted(scores):
        for k, beta in enumerate(scores[sid]):
            b = bins[k].get(sid) if bins[k] is not None else None
            rows.append((sid, k + 1, _num(beta), _num(percentiles[k][sid]), "" if b is None else b))
    return _write(path, SCORE_COLUMNS, rows)


def read_scores(path) -> dict[str, np.ndarray]:
    by_site: dict[str, dict[int, float]] = {}
    for row in _read(path):
        by_site.setdefault(row["site_id"], {})[int(row["k"])] = float(row["beta"])
    return {sid: np.array([ks[k] for k in sorted(ks)]) for sid, ks in sorted(by_site.items())}


def write_associations(path, results: Sequence[tuple[AssociationResult, str]]) -> Path:
    rows = (
        (
            r.subject,
            r.statistic.value,
            _num(r.value),
            _num(r.p_value),
            r.n,
            str(bool(r.significant_positive)).lower(),
            "" if r.p_bin is None else r.p_bin,
            against,
        )
        for r, against in results
    )
    return _write(path, ASSOCIATION_COLUMNS, rows)


def read_associations(path) -> list[dict[str, str]]:
    return _read(path)


def write_extrema_groups(path, groups: ExtremaGroups) -> Path:
    rows = [(s, "high") for s in sorted(groups.group_high)] + [(s, "low") for s in sorted(groups.group_low)]
    return _write(path, EXTREMA_COLUMNS, rows)


def read_extrema_groups(path) -> ExtremaGroups:
    rows = _read(path)
    return ExtremaGroups(
        frozenset(r["site_id"] for r in rows if r["group"] == "high"),
        frozenset(r["site_id"] for r in rows if r["group"] == "low"),
    )


def write_fve_table(path, lam: np.ndarray, fve: np.ndarray, K: int) -> Path:
    share = lam / lam.sum()
    rows = ((k + 1, _num(lam[k]), _num(share[k]), _num(fve[k]), str(k < K).lower()) for k in range(len(lam)))
    return _write(path, FVE_COLUMNS, rows)


def write_max_table(path, table: Sequence[MaxRow]) -> Path:
    rows = ((r.site_id, r.group, _num(r.max_value), r.week_of_max) for r in table)
    return _write(path, MAX_COLUMNS, rows)
