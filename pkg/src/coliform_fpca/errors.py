"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations

from typing import Iterable, Sequence


class ColiformFpcaError(Exception):
    """Base class for all errors raised by this package."""


# ---- ingestion -------------------------------------------------------------


class MalformedRow(ColiformFpcaError, ValueError):
    """One or more data rows failed validation.

    ``rows`` holds every rejected ``(row_index, reason)`` pair found in the
    input, with ``row_index`` counted from 1 for the first data row.
    """

    def __init__(self, rows: Sequence[tuple[int, str]], source: str = "") -> None:
        self.rows = list(rows)
        self.source = source
        head = "; ".join(f"row {i}: {why}" for i, why in self.rows[:5])
        more = f" (+{len(self.rows) - 5} more)" if len(self.rows) > 5 else ""
        where = f"{source}: " if source else ""
        super().__init__(f"{where}{len(self.rows)} malformed row(s): {head}{more}")


class MissingColumn(ColiformFpcaError, ValueError):
    def __init__(self, missing: Iterable[str], source: str = "") -> None:
        self.missing = sorted(missing)
        where = f"{source}: " if source else ""
        super().__init__(f"{where}missing column(s) {', '.join(self.missing)}")


class DuplicateSiteId(ColiformFpcaError, ValueError):
    def __init__(self, site_id: str, row: int) -> None:
        self.site_id = site_id
        self.row = row
        super().__init__(f"duplicate site_id {site_id!r} at row {row}")


class CoordinateOutOfRange(ColiformFpcaError, ValueError):
    def __init__(self, site_id: str, row: int, detail: str) -> None:
        self.site_id = site_id
        self.row = row
        super().__init__(f"site {site_id!r} (row {row}): {detail}")


# ---- preprocessing ---------------------------------------------------------


class NonPositiveValue(ColiformFpcaError, ValueError):
    def __init__(self, week: int, value: float, site_id: str = "") -> None:
        self.week = week
        self.value = value
        self.site_id = site_id
        who = f"site {site_id!r} " if site_id else ""
        super().__init__(f"{who}week {week}: cannot take log10 of {value!r}")


class UnmappedSite(ColiformFpcaError, KeyError):
    def __init__(self, site_id: str, kind: str) -> None:
        self.site_id = site_id
        self.kind = kind
        super().__init__(f"site {site_id!r} has no {kind} location in the site/covariate map")

    def __str__(self) -> str:
        return self.args[0]


class UnknownSite(ColiformFpcaError, KeyError):
    def __init__(self, site_ids: Iterable[str]) -> None:
        self.site_ids = sorted(site_ids)
        super().__init__(f"sites missing from the site registry: {', '.join(self.site_ids[:10])}")

    def __str__(self) -> str:
        return self.args[0]


# ---- smoothing / FPCA ------------------------------------------------------


class DegenerateLocalDesign(ColiformFpcaError, ValueError):
    """The local fit at an evaluation point has too few distinct design points."""

    def __init__(self, index: int | tuple[int, ...], bandwidth: object) -> None:
        self.index = index
        self.bandwidth = bandwidth
        super().__init__(
            f"degenerate local design at evaluation index {index} with bandwidth {bandwidth}; widen h"
        )


class AllCandidatesDegenerate(ColiformFpcaError, ValueError):
    pass


class NoPositiveEigenvalues(ColiformFpcaError, ValueError):
    pass


class EmptySeries(ColiformFpcaError, ValueError):
    pass


class NotDense(ColiformFpcaError, ValueError):
    pass


class InvalidParams(ColiformFpcaError, ValueError):
    pass


class DimensionMismatch(ColiformFpcaError, ValueError):
    pass


# ---- association -----------------------------------------------------------


class InsufficientData(ColiformFpcaError, ValueError):
    pass


class ZeroVariance(ColiformFpcaError, ValueError):
    pass


class ConstantPredictor(ColiformFpcaError, ValueError):
    pass


class TooFewSites(ColiformFpcaError, ValueError):
    pass


class InsufficientOverlap(ColiformFpcaError, ValueError):
    def __init__(self, site_id: str, n_common: int) -> None:
        self.site_id = site_id
        self.n_common = n_common
        super().__init__(f"site {site_id!r}: only {n_common} common week(s), need at least 3")


# ---- export / orchestration ------------------------------------------------


class MissingCoordinates(ColiformFpcaError, ValueError):
    def __init__(self, site_ids: Iterable[str]) -> None:
        self.site_ids = sorted(site_ids)
        super().__init__(f"no coordinates for site(s): {', '.join(self.site_ids)}")


class StageError(ColiformFpcaError):
    """Wraps any failure inside a pipeline stage with the stage name."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
