"""Parsing and in-memory storage of raw monitoring data.

Four flat CSV layouts are understood (UTF-8, comma separated, header row
mandatory):

* samples:            ``site_id,date,fc_count,salinity,temperature``
* sites:              ``site_id,latitude,longitude,province``
* covariates:         ``location_id,date,value``
* site/covariate map: ``site_id,location_id,kind``

Row indices in error messages count data rows from 1.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import IO, Iterator, Mapping, Sequence, Union

from .errors import CoordinateOutOfRange, DuplicateSiteId, MalformedRow, MissingColumn

TextSource = Union[str, IO[str]]

SAMPLE_COLUMNS = ("site_id", "date", "fc_count", "salinity", "temperature")
SITE_COLUMNS = ("site_id", "latitude", "longitude", "province")
COVARIATE_COLUMNS = ("location_id", "date", "value")
MAP_COLUMNS = ("site_id", "location_id", "kind")


class Province(str, Enum):
    BC = "BC"
    QC = "QC"
    NB = "NB"
    PE = "PE"
    NS = "NS"
    NL = "NL"


class CovariateKind(str, Enum):
    PRECIPITATION = "precipitation"
    RIVER_FLOW = "river_flow"


@dataclass(frozen=True)
class SampleRecord:
    site_id: str
    date: dt.date
    fc_count: float
    salinity: float | None = None
    temperature: float | None = None


@dataclass(frozen=True)
class SiteInfo:
    latitude: float
    longitude: float
    province: Province


@dataclass(frozen=True)
class CovariateRecord:
    location_id: str
    date: dt.date
    value: float
    kind: CovariateKind


class SiteRegistry(Mapping[str, SiteInfo]):
    """Read-only mapping ``site_id -> SiteInfo``."""

    def __init__(self, entries: Mapping[str, SiteInfo] | None = None) -> None:
        self._entries = MappingProxyType(dict(entries or {}))

    def __getitem__(self, site_id: str) -> SiteInfo:
        return self._entries[site_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"SiteRegistry({len(self)} sites)"


def _open_text(source: TextSource) -> IO[str]:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def _read_rows(source: TextSource, columns: Sequence[str], name: str) -> Iterator[tuple[int, dict]]:
    reader = csv.DictReader(_open_text(source))
    header = reader.fieldnames
    if header is None:
        raise MissingColumn(columns, name)
    header = [h.strip().lstrip("﻿") for h in header]
    reader.fieldnames = header
    missing = set(columns) - set(header)
    if missing:
        raise MissingColumn(missing, name)
    for i, row in enumerate(reader, start=1):
        if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
            continue
        yield i, row


def _parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())


def _parse_real(text: str, what: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ValueError(f"unparseable {what} {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"non-finite {what} {text!r}")
    return value


def _parse_optional(text: str | None, what: str) -> float | None:
    if text is None or not text.strip():
        return None
    return _parse_real(text, what)


def _finish(records: list, rejected: list[tuple[int, str]], rejects: list | None, name: str) -> list:
    if rejected:
        if rejects is None:
            raise MalformedRow(rejected, name)
        rejects.extend(rejected)
    return records


def parse_samples(source: TextSource, rejects: list[tuple[int, str]] | None = None) -> list[SampleRecord]:
    """Parse a samples CSV into records.

    The whole input is scanned before failing, so a raised ``MalformedRow``
    enumerates every bad row. Pass a list as ``rejects`` to collect the bad
    rows there and get the accepted records back instead.
    """
    records: list[SampleRecord] = []
    rejected: list[tuple[int, str]] = []
    for i, row in _read_rows(source, SAMPLE_COLUMNS, "samples"):
        try:
            site_id = (row["site_id"] or "").strip()
            if not site_id:
                raise ValueError("empty site_id")
            try:
                date = _parse_date(row["date"] or "")
            except ValueError:
                raise ValueError(f"unparseable date {row['date']!r}") from None
            count = _parse_real(row["fc_count"], "fc_count")
            if count < 0:
                raise ValueError(f"negative fc_count {count!r}")
            record = SampleRecord(
                site_id,
                date,
                count,
                _parse_optional(row.get("salinity"), "salinity"),
                _parse_optional(row.get("temperature"), "temperature"),
            )
        except ValueError as exc:
            rejected.append((i, str(exc)))
            continue
        records.append(record)
    return _finish(records, rejected, rejects, "samples")


def parse_sites(source: TextSource) -> SiteRegistry:
    entries: dict[str, SiteInfo] = {}
    rejected: list[tuple[int, str]] = []
    for i, row in _read_rows(source, SITE_COLUMNS, "sites"):
        site_id = (row["site_id"] or "").strip()
        try:
            lat = _parse_real(row["latitude"], "latitude")
            lon = _parse_real(row["longitude"], "longitude")
            province = Province((row["province"] or "").strip().upper())
        except ValueError as exc:
            rejected.append((i, str(exc)))
            continue
        if not site_id:
            rejected.append((i, "empty site_id"))
            continue
        if site_id in entries:
            raise DuplicateSiteId(site_id, i)
        if not -90.0 <= lat <= 90.0:
            raise CoordinateOutOfRange(site_id, i, f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise CoordinateOutOfRange(site_id, i, f"longitude {lon} outside [-180, 180]")
        entries[site_id] = SiteInfo(lat, lon, province)
    if rejected:
        raise MalformedRow(rejected, "sites")
    return SiteRegistry(entries)


def parse_covariates(
    source: TextSource,
    kind: CovariateKind | str,
    rejects: list[tuple[int, str]] | None = None,
) -> list[CovariateRecord]:
    kind = CovariateKind(kind)
    records: list[CovariateRecord] = []
    rejected: list[tuple[int, str]] = []
    for i, row in _read_rows(source, COVARIATE_COLUMNS, kind.value):
        try:
            location = (row["location_id"] or "").strip()
            if not location:
                raise ValueError("empty location_id")
            try:
                date = _parse_date(row["date"] or "")
            except ValueError:
                raise ValueError(f"unparseable date {row['date']!r}") from None
            value = _parse_real(row["value"], "value")
            if value < 0:
                raise ValueError(f"negative {kind.value} value {value!r}")
        except ValueError as exc:
            rejected.append((i, str(exc)))
            continue
        records.append(CovariateRecord(location, date, value, kind))
    return _finish(records, rejected, rejects, kind.value)


def parse_site_covariate_map(source: TextSource) -> dict[CovariateKind, dict[str, str]]:
    """Parse the site -> covariate location linkage, keyed by covariate kind."""
    out: dict[CovariateKind, dict[str, str]] = {k: {} for k in CovariateKind}
    rejected: list[tuple[int, str]] = []
    for i, row in _read_rows(source, MAP_COLUMNS, "site_covariate_map"):
        site_id = (row["site_id"] or "").strip()
        location = (row["location_id"] or "").strip()
        try:
            kind = CovariateKind((row["kind"] or "").strip())
        except ValueError:
            rejected.append((i, f"unknown kind {row['kind']!r}"))
            continue
        if not site_id or not location:
            rejected.append((i, "empty site_id or location_id"))
        elif site_id in out[kind] and out[kind][site_id] != location:
            rejected.append((i, f"site {site_id!r} already mapped to {out[kind][site_id]!r} for {kind.value}"))
        else:
            out[kind][site_id] = location
    if rejected:
        raise MalformedRow(rejected, "site_covariate_map")
    return out


# ---- serialization ---------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def format_samples(records: Sequence[SampleRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SAMPLE_COLUMNS)
    for r in records:
        writer.writerow([r.site_id, r.date.isoformat(), _fmt(r.fc_count), _fmt(r.salinity), _fmt(r.temperature)])
    return buf.getvalue()


def format_sites(registry: Mapping[str, SiteInfo]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SITE_COLUMNS)
    for site_id, info in registry.items():
        writer.writerow([site_id, _fmt(info.latitude), _fmt(info.longitude), info.province.value])
    return buf.getvalue()


def format_covariates(records: Sequence[CovariateRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COVARIATE_COLUMNS)
    for r in records:
        writer.writerow([r.location_id, r.date.isoformat(), _fmt(r.value)])
    return buf.getvalue()


def format_site_covariate_map(mapping: Mapping[CovariateKind, Mapping[str, str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MAP_COLUMNS)
    for kind in CovariateKind:
        for site_id, location in mapping.get(kind, {}).items():
            writer.writerow([site_id, location, kind.value])
    return buf.getvalue()


# ---- the store -------------------------------------------------------------


@dataclass(frozen=True)
class LongitudinalStore:
    """Everything ingested for one run. Built once, never mutated."""

    samples: tuple[SampleRecord, ...]
    sites: SiteRegistry
    precipitation: tuple[CovariateRecord, ...] = ()
    flow: tuple[CovariateRecord, ...] = ()
    covariate_map: Mapping[CovariateKind, Mapping[str, str]] = field(
        default_factory=lambda: MappingProxyType({k: MappingProxyType({}) for k in CovariateKind})
    )

    def samples_by_site(self) -> dict[str, list[SampleRecord]]:
        grouped: dict[str, list[SampleRecord]] = {}
        for r in self.samples:
            grouped.setdefault(r.site_id, []).append(r)
        return grouped


def _read_file(path: Path | str) -> str:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return path.read_text(encoding="utf-8")


def load_store(
    samples: Path | str,
    sites: Path | str,
    precipitation: Path | str | None = None,
    flow: Path | str | None = None,
    site_covariate_map: Path | str | None = None,
) -> LongitudinalStore:
    """Read all inputs from disk. Optional covariate files may be ``None``."""
    records = parse_samples(_read_file(samples))
    registry = parse_sites(_read_file(sites))
    precip = parse_covariates(_read_file(precipitation), CovariateKind.PRECIPITATION) if precipitation else []
    flows = parse_covariates(_read_file(flow), CovariateKind.RIVER_FLOW) if flow else []
    mapping = parse_site_covariate_map(_read_file(site_covariate_map)) if site_covariate_map else {}
    frozen_map = MappingProxyType(
        {k: MappingProxyType(dict(mapping.get(k, {}))) for k in CovariateKind}
    )
    return LongitudinalStore(tuple(records), registry, tuple(precip), tuple(flows), frozen_map)
