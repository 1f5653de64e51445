"""Run configuration: a flat ``key = value`` text file plus CLI overrides.

Lines starting with ``#`` are comments. List values are comma separated.
Every key is also a command-line flag of the same name.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import InvalidParams
from .preprocess import PROVINCE_WINDOWS
from .store import Province

ATLANTIC = ("QC", "NB", "PE", "NS")


@dataclass(frozen=True)
class RunConfig:
    samples: str | None = None
    sites: str | None = None
    precipitation: str | None = None
    flow: str | None = None
    site_covariate_map: str | None = None
    province: str = "BC"
    cutoff_year: int = 1999
    detection_limit: float = 2.0
    max_gap: int = 4
    precip_horizon_days: int = 5
    fve_threshold: float = 0.95
    covariate_fve_threshold: float = 0.95
    k_override: int | None = None
    bandwidth_candidates: tuple[float, ...] | None = None
    cv_folds: int = 5
    alpha: float = 0.05
    extrema_q: float = 0.10
    n_bins: int = 10
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self) -> None:
        checks = [
            (1900 <= self.cutoff_year <= 2100, "cutoff_year must lie in 1900..2100"),
            (self.detection_limit >= 0, "detection_limit must be non-negative"),
            (1 <= self.max_gap <= 52, "max_gap must lie in 1..52"),
            (self.precip_horizon_days >= 1, "precip_horizon_days must be positive"),
            (0 < self.fve_threshold <= 1, "fve_threshold must lie in (0, 1]"),
            (0 < self.covariate_fve_threshold <= 1, "covariate_fve_threshold must lie in (0, 1]"),
            (self.k_override is None or self.k_override >= 1, "k_override must be at least 1"),
            (self.cv_folds >= 2, "cv_folds must be at least 2"),
            (0 < self.alpha < 1, "alpha must lie in (0, 1)"),
            (0 < self.extrema_q < 0.5, "extrema_q must lie in (0, 0.5)"),
            (self.n_bins == 10, "n_bins is fixed at 10 by the palette"),
            (
                self.bandwidth_candidates is None
                or (len(self.bandwidth_candidates) >= 2 and all(h > 0 for h in self.bandwidth_candidates)),
                "bandwidth_candidates needs at least two positive values",
            ),
        ]
        for ok, message in checks:
            if not ok:
                raise InvalidParams(message)
        self.provinces()

    def provinces(self) -> tuple[Province, ...]:
        """Provinces analysed together; all must share one week window."""
        names = [p.strip().upper() for p in self.province.split(",") if p.strip()]
        expanded: list[str] = []
        for name in names:
            expanded.extend(ATLANTIC if name == "ATLANTIC" else [name])
        try:
            provs = tuple(sorted({Province(n) for n in expanded}, key=lambda p: p.value))
        except ValueError as exc:
            raise InvalidParams(f"unknown province in {self.province!r}: {exc}") from None
        if not provs:
            raise InvalidParams("province filter is empty")
        windows = {PROVINCE_WINDOWS[p] for p in provs}
        if len(windows) > 1:
            raise InvalidParams(f"provinces {self.province!r} span different week windows {sorted(windows)}")
        return provs

    def window(self) -> tuple[int, int]:
        return PROVINCE_WINDOWS[self.provinces()[0]]

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        if d["bandwidth_candidates"] is not None:
            d["bandwidth_candidates"] = list(d["bandwidth_candidates"])
        return d


def _field_types() -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(RunConfig)}


def coerce(key: str, raw: Any) -> Any:
    """Convert a text value to the type of config field ``key``."""
    types = _field_types()
    if key not in types:
        raise InvalidParams(f"unknown config key {key!r}")
    if raw is None:
        return None
    if not isinstance(raw, str):
        return tuple(raw) if key == "bandwidth_candidates" else raw
    text = raw.strip()
    kind = types[key]
    if text.lower() in ("", "none", "null") and "None" in kind:
        return None
    try:
        if key == "bandwidth_candidates":
            return tuple(float(v) for v in text.split(",") if v.strip())
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise InvalidParams(f"bad value for {key}: {raw!r}") from None
    return text


def parse_config_text(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidParams(f"config line {n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = coerce(key, value)
    return values


def load_config(path: Path | str | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Config file values, then non-None overrides on top. Relative input
    paths in the file are resolved against the file's directory."""
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        values = parse_config_text(path.read_text(encoding="utf-8"))
        for key in ("samples", "sites", "precipitation", "flow", "site_covariate_map", "output_dir"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(path.parent / values[key])
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = coerce(key, value)
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if value is None:
            value = "none"
        elif isinstance(value, list):
            value = ",".join(repr(float(v)) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
