"""GeoJSON decile maps and SVG curve plots."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from .errors import MissingCoordinates
from .fpca import FpcaModel
from .store import SiteInfo

# Fixed blue -> red sequential palette; bin 1 is the lowest scores.
PALETTE: tuple[str, ...] = (
    "#313695",
    "#4575b4",
    "#74add1",
    "#abd9e9",
    "#e0f3f8",
    "#fee090",
    "#fdae61",
    "#f46d43",
    "#d73027",
    "#a50026",
)

_POSITION = {"type": "array", "minItems": 2, "maxItems": 3, "items": {"type": "number"}}

GEOJSON_SCHEMA = {
    "type": "object",
    "required": ["type", "features"],
    "properties": {
        "type": {"const": "FeatureCollection"},
        "features": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "geometry", "properties"],
                "properties": {
                    "type": {"const": "Feature"},
                    "geometry": {
                        "type": "object",
                        "required": ["type", "coordinates"],
                        "properties": {
                            "type": {"const": "Point"},
                            "coordinates": {
                                **_POSITION,
                                "prefixItems": [
                                    {"type": "number", "minimum": -180, "maximum": 180},
                                    {"type": "number", "minimum": -90, "maximum": 90},
                                ],
                            },
                        },
                    },
                    "properties": {
                        "type": "object",
                        "required": ["site_id", "bin", "color"],
                        "properties": {
                            "site_id": {"type": "string"},
                            "bin": {"type": "integer", "minimum": 1, "maximum": 10},
                            "color": {"type": "string", "pattern": "^#[0-9a-f]{6}$"},
                        },
                    },
                },
            },
        },
    },
}


def color_for_bin(b: int, palette: Sequence[str] = PALETTE) -> str:
    if not 1 <= b <= len(palette):
        raise ValueError(f"bin {b} outside 1..{len(palette)}")
    return palette[b - 1]


def export_geojson(
    registry: Mapping[str, SiteInfo],
    bins: Mapping[str, int],
    scores: Mapping[str, float] | None = None,
    percentiles: Mapping[str, float] | None = None,
    palette: Sequence[str] = PALETTE,
    extra: Mapping[str, Mapping[str, object]] | None = None,
) -> str:
    """FeatureCollection of binned sites, one Point per site, sorted by id.

    ``extra`` adds per-site properties (for example a correlation and its
    p-value on the correlation map).
    """
    missing = [s for s in bins if s not in registry]
    if missing:
        raise MissingCoordinates(missing)
    features = []
    for site_id in sorted(bins):
        info = registry[site_id]
        props: dict[str, object] = {"site_id": site_id, "bin": int(bins[site_id]),
                                    "color": color_for_bin(int(bins[site_id]), palette)}
        if scores is not None:
            props["score"] = float(scores[site_id])
        if percentiles is not None:
            props["percentile"] = float(percentiles[site_id])
        if extra and site_id in extra:
            props.update(extra[site_id])
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(info.longitude), float(info.latitude)]},
            "properties": props,
        })
    return json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n"


def validate_geojson(text: str) -> None:
    """Raise ``jsonschema.ValidationError`` unless ``text`` is a Point FeatureCollection."""
    jsonschema.validate(json.loads(text), GEOJSON_SCHEMA)


# ---- SVG plots ---------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.fonttype"] = "none"
    matplotlib.rcParams["svg.hashsalt"] = "coliform-fpca"
    return plt


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def plot_components(model: FpcaModel, path: Path | str) -> Path:
    """Mean curve (left) and the K selected components with FVE shares (right)."""
    plt = _pyplot()
    share = model.lam / model.lam.sum()
    fig, (ax_mu, ax_phi) = plt.subplots(1, 2, figsize=(10, 4))
    (line,) = ax_mu.plot(model.grid, model.mu, color="black")
    line.set_gid("mean")
    ax_mu.set_xlabel("week")
    ax_mu.set_ylabel("log10 level")
    ax_mu.set_title("mean function")
    for k in range(model.K):
        (line,) = ax_phi.plot(model.grid, model.phi[k], label=f"FPC{k + 1} ({100 * share[k]:.1f}%)")
        line.set_gid(f"fpc-{k + 1}")
    ax_phi.axhline(0.0, color="grey", linewidth=0.5)
    ax_phi.set_xlabel("week")
    ax_phi.set_ylabel("component value")
    ax_phi.legend()
    fig.tight_layout()
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def plot_curves(
    curves: Mapping[str, np.ndarray],
    grid: np.ndarray,
    path: Path | str,
    title: str,
    ylabel: str = "log10 level",
    color: str = "tab:red",
    mean_style: str = "--",
) -> Path:
    """One thin line per site plus the across-site mean in black."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for sid in sorted(curves):
        (line,) = ax.plot(grid, curves[sid], color=color, alpha=0.5, linewidth=0.8)
        line.set_gid(f"site-{sid}")
    if curves:
        (line,) = ax.plot(grid, np.mean([curves[s] for s in curves], axis=0), "k" + mean_style, linewidth=2)
        line.set_gid("group-mean")
    ax.set_xlabel("week")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def plot_weekly(series: Mapping[int, float], path: Path | str, title: str, ylabel: str) -> Path:
    plt = _pyplot()
    weeks = sorted(series)
    fig, ax = plt.subplots(figsize=(6, 4))
    (line,) = ax.plot(weeks, [series[w] for w in weeks], color="tab:blue", marker="o", markersize=3)
    line.set_gid("weekly")
    ax.set_xlabel("week")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def export_curves_svg(
    model: FpcaModel,
    out_dir: Path | str,
    group_curves: Mapping[str, Mapping[str, np.ndarray]] | None = None,
    covariate_curves: Mapping[str, Mapping[str, np.ndarray]] | None = None,
    flow_series: Mapping[str, Mapping[int, float]] | None = None,
    covariate_grid: np.ndarray | None = None,
) -> tuple[list[Path], list[str]]:
    """Write every plot into ``out_dir`` and return (paths, notes).

    ``group_curves`` maps a group name ("high", "low") to reconstructed site
    curves; empty groups are skipped and noted. ``covariate_curves`` maps a
    name to per-site covariate curves on ``covariate_grid``.
    """
    out = Path(out_dir)
    paths = [plot_components(model, out / "fpc_components.svg")]
    notes: list[str] = []
    for name, curves in (group_curves or {}).items():
        if not curves:
            notes.append(f"extrema group {name!r} is empty; plot omitted")
            continue
        colour = "tab:red" if name == "high" else "tab:blue"
        paths.append(plot_curves(curves, model.grid, out / f"extrema_{name}.svg",
                                 f"reconstructed levels, {name} FPC2 group", color=colour))
    grid = model.grid if covariate_grid is None else covariate_grid
    for name, curves in (covariate_curves or {}).items():
        if not curves:
            notes.append(f"covariate overlay {name!r} has no sites; plot omitted")
            continue
        paths.append(plot_curves(curves, grid, out / f"covariate_{name}.svg", name,
                                 ylabel="weekly level", color="tab:green", mean_style="-"))
    for river, series in (flow_series or {}).items():
        paths.append(plot_weekly(series, out / f"flow_{river}.svg", f"weekly mean flow, {river}", "flow (m3/s)"))
    return paths, notes
