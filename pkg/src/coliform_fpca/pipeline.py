"""Stage-by-stage orchestration over an output directory.

Each stage reads what earlier stages wrote, so the CLI can run them one at
a time or all together with ``run``. Every stage records its notes in
``run_log.json`` next to the full effective configuration.
"""

from __future__ import annotations

import functools
import json
import logging
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import association as assoc
from .config import RunConfig
from .errors import ColiformFpcaError, InvalidParams, StageError, TooFewSites, UnknownSite
from .export import PALETTE, export_curves_svg, export_geojson, validate_geojson
from .fpca import FpcaConfig, FpcaModel, fit_fpca, pace_scores, reconstruct, score_all
from .preprocess import (
    WeeklySeries,
    cumulative_precip,
    preprocess_sites,
    weekly_flow,
    window_subset,
)
from .store import CovariateKind, LongitudinalStore, load_store, parse_site_covariate_map, parse_sites
from .synth import RNG_ALGORITHM
from . import tables

log = logging.getLogger(__name__)

STAGES = ("ingest", "preprocess", "fit", "scores", "associate", "export")

DECISIONS = {
    "kernel": "epanechnikov",
    "week_of_day": "min(ceil(day_of_year / 7), 52)",
    "weekly_value": "arithmetic mean of raw counts pooled across years, then log10",
    "detection_rule": "site dropped when every post-cutoff count < detection_limit",
    "cutoff_rule": "site dropped when no sample has year >= cutoff_year",
    "gap_rule": "drop when a run of >= max_gap missing weeks lies inside the province window",
    "province_windows": {"BC": [1, 52], "QC": [19, 45], "NB": [19, 45], "PE": [19, 45], "NS": [19, 45], "NL": [20, 38]},
    "precipitation_rule": "sum over the horizon_days days before sampling; missing days count 0",
    "bandwidth_candidates_default": "10 geometric values from grid spacing to half the window width",
    "bandwidth_selection": "admissible on the grid, then k-fold CV (folds = min(cv_folds, points)), ties to larger h",
    "covariance_smoothing": "2D local-linear on off-diagonal products only, symmetrized",
    "sigma2_rule": "mean of smoothed diagonal minus surface diagonal over the middle 50% of the grid, floored at 0",
    "quadrature": "trapezoid",
    "eigen_sign": "weighted integral >= 0, ties by first grid value >= 0",
    "fve_denominator": "positive eigenvalues only",
    "k_cap": "n_sites - 2",
    "scores": "conditional expectation (Gaussian best linear predictor)",
    "spearman_p": "two-sided t approximation with n - 2 df",
    "decile_rule": "sorted by (score, site_id); sizes differ by <= 1, larger bins on top",
    "p_bin_rule": "10 equal log10 bins between alpha and 1e-10; p < 1e-10 in bin 10",
    "palette": list(PALETTE),
    "rng_algorithm": RNG_ALGORITHM,
}


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir)


def _log_path(cfg: RunConfig) -> Path:
    return _out(cfg) / "run_log.json"


def _update_log(cfg: RunConfig, stage: str, notes: Mapping, fresh: bool = False) -> None:
    path = _log_path(cfg)
    doc = {}
    if path.is_file() and not fresh:
        doc = json.loads(path.read_text(encoding="utf-8"))
    doc["config"] = cfg.to_dict()
    doc["decisions"] = DECISIONS
    doc.setdefault("stages", {})[stage] = notes
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")


def stage(name: str) -> Callable:
    """Wrap a stage: tag failures with the stage name and record its notes."""

    def wrap(fn):
        @functools.wraps(fn)
        def inner(cfg: RunConfig, *args, **kwargs):
            try:
                notes = fn(cfg, *args, **kwargs)
            except StageError:
                raise
            except (ColiformFpcaError, OSError, ValueError, KeyError) as exc:
                raise StageError(name, exc) from exc
            _update_log(cfg, name, notes)
            log.info("stage %s done", name)
            return notes

        return inner

    return wrap


def _fpca_config(cfg: RunConfig, threshold: float | None = None, k_override: int | None = None) -> FpcaConfig:
    return FpcaConfig(
        fve_threshold=cfg.fve_threshold if threshold is None else threshold,
        k_override=k_override,
        bandwidth_candidates=cfg.bandwidth_candidates,
        cv_folds=cfg.cv_folds,
        seed=cfg.seed,
    )


def _load(cfg: RunConfig) -> LongitudinalStore:
    if not cfg.samples or not cfg.sites:
        raise InvalidParams("both 'samples' and 'sites' inputs are required")
    return load_store(cfg.samples, cfg.sites, cfg.precipitation, cfg.flow, cfg.site_covariate_map)


def _read_series(cfg: RunConfig) -> dict[str, WeeklySeries]:
    return tables.read_weekly_series(_out(cfg) / "weekly_series.csv", cfg.window())


def _read_model(path: Path) -> FpcaModel:
    return FpcaModel.from_json(path.read_text(encoding="utf-8"))


@stage("ingest")
def ingest(cfg: RunConfig) -> dict:
    store = _load(cfg)
    notes = {
        "samples": len(store.samples),
        "sites": len(store.sites),
        "sites_with_samples": len({r.site_id for r in store.samples}),
        "precipitation_records": len(store.precipitation),
        "flow_records": len(store.flow),
        "mapped_sites": {k.value: len(v) for k, v in store.covariate_map.items()},
    }
    _out(cfg).mkdir(parents=True, exist_ok=True)
    (_out(cfg) / "ingest_summary.json").write_text(json.dumps(notes, indent=1, sort_keys=True) + "\n")
    return notes


@stage("preprocess")
def preprocess(cfg: RunConfig) -> dict:
    store = _load(cfg)
    wanted = set(cfg.provinces())
    unknown = {r.site_id for r in store.samples} - set(store.sites)
    if unknown:
        raise UnknownSite(unknown)
    provinces = {sid: info.province for sid, info in store.sites.items() if info.province in wanted}
    samples = [r for r in store.samples if r.site_id in provinces]
    series, report = preprocess_sites(samples, provinces, cfg.cutoff_year, cfg.detection_limit, cfg.max_gap)
    out = _out(cfg)
    tables.write_weekly_series(out / "weekly_series.csv", series)
    tables.write_exclusion_report(out / "exclusion_report.csv", report)

    covariates: dict[tuple[str, str], WeeklySeries] = {}
    notes: dict = {
        "input_sites": len(report.dispositions),
        "dispositions": {d.value: n for d, n in report.counts().items()},
    }
    if store.precipitation:
        mapping = store.covariate_map[CovariateKind.PRECIPITATION]
        retained = [r for r in samples if r.site_id in series and r.date.year >= cfg.cutoff_year]
        mapped = [r for r in retained if r.site_id in mapping]
        precip, filled = cumulative_precip(store.precipitation, mapped, mapping, cfg.precip_horizon_days)
        for sid, s in precip.items():
            covariates[(CovariateKind.PRECIPITATION.value, sid)] = window_subset(s, provinces[sid])
        notes["precipitation_zero_filled_days"] = filled
        notes["precipitation_unmapped_sites"] = sorted(set(series) - set(mapping))
    if store.flow:
        for river, s in weekly_flow(store.flow).items():
            covariates[(CovariateKind.RIVER_FLOW.value, river)] = s
        notes["rivers"] = sorted({loc for (k, loc) in covariates if k == CovariateKind.RIVER_FLOW.value})
    if covariates:
        tables.write_covariate_series(out / "covariate_series.csv", covariates)
    return notes


@stage("fit")
def fit(cfg: RunConfig) -> dict:
    series = _read_series(cfg)
    model = fit_fpca(series, _fpca_config(cfg, k_override=cfg.k_override))
    out = _out(cfg)
    (out / "model.json").write_text(model.to_json(), encoding="utf-8")
    tables.write_fve_table(out / "fve.csv", model.lam, model.fve, model.K)
    return {
        "n_sites": model.n_sites,
        "K": model.K,
        "fve": [float(v) for v in model.fve[: max(model.K, 3)]],
        "eigenvalues": [float(v) for v in model.lam[: max(model.K, 3)]],
        "sigma2": model.sigma2,
        "bandwidths": dict(model.bandwidths),
    }


def _bins_or_none(values: Mapping[str, float], n_bins: int):
    if len(values) < n_bins:
        return None
    return assoc.decile_bins(dict(values), n_bins=n_bins)


@stage("scores")
def scores(cfg: RunConfig) -> dict:
    series = _read_series(cfg)
    model = _read_model(_out(cfg) / "model.json")
    betas = score_all(series, model)
    pcts, bins = [], []
    for k in range(model.K):
        column = {sid: float(b[k]) for sid, b in betas.items()}
        pcts.append(assoc.percentiles(column))
        bins.append(_bins_or_none(column, cfg.n_bins))
    tables.write_scores(_out(cfg) / "scores.csv", betas, pcts, bins)
    notes = {"scored_sites": len(betas)}
    if bins and bins[0] is None:
        notes["bins"] = f"fewer than {cfg.n_bins} sites; decile bins left empty"
    return notes


def _curves(model: FpcaModel, betas: Mapping[str, np.ndarray]) -> dict[str, dict[int, float]]:
    weeks = [int(g) for g in model.grid]
    return {sid: dict(zip(weeks, reconstruct(model, b).tolist())) for sid, b in betas.items()}


@stage("associate")
def associate(cfg: RunConfig) -> dict:
    out = _out(cfg)
    series = _read_series(cfg)
    model = _read_model(out / "model.json")
    betas = tables.read_scores(out / "scores.csv")
    fpc1 = {sid: float(b[0]) for sid, b in betas.items()}
    rows: list[tuple[assoc.AssociationResult, str]] = []
    notes: dict = {}

    mvf = assoc.max_vs_fpc1(series, fpc1, cfg.alpha, cfg.n_bins)
    rows.append((mvf.result, "max_vs_fpc1_percentile"))
    pct = assoc.percentiles(fpc1)
    ids = sorted(fpc1)
    rho, p = assoc.spearman([pct[s] for s in ids], [float(np.max(series[s].array)) for s in ids])
    rows.append((assoc.AssociationResult("global", assoc.Statistic.SPEARMAN_RHO, rho, p, len(ids),
                                         rho > 0 and p < cfg.alpha), "max_vs_fpc1_percentile"))
    tables.write_max_table(out / "max_table.csv", mvf.table)
    notes["max_vs_fpc1"] = {"r_squared": mvf.regression.r_squared, "p_value": mvf.regression.p_value,
                            "slope": mvf.regression.slope}

    if model.K >= 2 and len(betas) >= round(1 / cfg.extrema_q):
        groups = assoc.extrema_groups(fpc1, {sid: float(b[1]) for sid, b in betas.items()}, cfg.extrema_q)
    else:
        groups = assoc.ExtremaGroups(frozenset(), frozenset(), cfg.extrema_q)
        notes["extrema_groups"] = "needs K >= 2 and enough sites; groups left empty"
    tables.write_extrema_groups(out / "extrema_groups.csv", groups)
    notes["group_sizes"] = {"high": len(groups.group_high), "low": len(groups.group_low)}

    curves = _curves(model, betas)
    cov_path = out / "covariate_series.csv"
    covariates = tables.read_covariate_series(cov_path) if cov_path.is_file() else {}
    precip = {sid: window_subset(s, cfg.provinces()[0]) for (k, sid), s in covariates.items()
              if k == CovariateKind.PRECIPITATION.value and sid in curves}
    precip = {sid: s for sid, s in precip.items() if len(s)}
    if precip:
        try:
            pmodel = fit_fpca(precip, _fpca_config(cfg, threshold=cfg.covariate_fve_threshold))
        except TooFewSites as exc:
            notes["precipitation"] = f"skipped: {exc}"
        else:
            (out / "covariate_model.json").write_text(pmodel.to_json(), encoding="utf-8")
            pcurves = _curves(pmodel, {sid: pace_scores(s, pmodel) for sid, s in precip.items()})
            results = assoc.site_covariate_correlation({s: curves[s] for s in pcurves}, pcurves, cfg.alpha)
            rows.extend((r, "precipitation") for r in results)
            notes["precipitation"] = {
                "covariate_K": pmodel.K,
                "covariate_fve": float(pmodel.fve[pmodel.K - 1]),
                "sites": len(results),
                "significant_positive": len(assoc.significant_positive(results)),
            }
    if any(k == CovariateKind.RIVER_FLOW.value for k, _ in covariates):
        mapping = parse_site_covariate_map(Path(cfg.site_covariate_map).read_text(encoding="utf-8")) \
            if cfg.site_covariate_map else {}
        rivers = mapping.get(CovariateKind.RIVER_FLOW, {})
        by_river: dict[str, list[str]] = {}
        for sid in sorted(curves):
            if sid in rivers and (CovariateKind.RIVER_FLOW.value, rivers[sid]) in covariates:
                by_river.setdefault(rivers[sid], []).append(sid)
        flow_notes = {}
        for river, sids in sorted(by_river.items()):
            flow = covariates[(CovariateKind.RIVER_FLOW.value, river)].values
            results = assoc.site_covariate_correlation({s: curves[s] for s in sids}, {s: flow for s in sids},
                                                       cfg.alpha)
            rows.extend((r, f"river_flow:{river}") for r in results)
            flow_notes[river] = {"sites": len(results),
                                 "significant_positive": len(assoc.significant_positive(results))}
        notes["river_flow"] = flow_notes
    tables.write_associations(out / "associations.csv", rows)
    return notes


@stage("export")
def export(cfg: RunConfig) -> dict:
    out = _out(cfg)
    if not cfg.sites:
        raise InvalidParams("'sites' input is required for export")
    registry = parse_sites(Path(cfg.sites).read_text(encoding="utf-8"))
    model = _read_model(out / "model.json")
    betas = tables.read_scores(out / "scores.csv")
    notes: dict = {"geojson": []}
    for k in range(min(model.K, 2)):
        column = {sid: float(b[k]) for sid, b in betas.items()}
        bins = _bins_or_none(column, cfg.n_bins)
        if bins is None:
            notes["geojson_skipped"] = f"fewer than {cfg.n_bins} sites"
            break
        text = export_geojson(registry, bins, column, assoc.percentiles(column))
        validate_geojson(text)
        name = "bins.geojson" if k == 0 else f"bins_fpc{k + 1}.geojson"
        (out / name).write_text(text, encoding="utf-8")
        notes["geojson"].append(name)

    assoc_path = out / "associations.csv"
    if assoc_path.is_file():
        sig = {r["subject"]: r for r in tables.read_associations(assoc_path)
               if r["against"] == "precipitation" and r["significant_positive"] == "true"}
        if sig:
            text = export_geojson(
                registry,
                {s: int(r["p_bin"]) for s, r in sig.items()},
                extra={s: {"rho": float(r["value"]), "p_value": float(r["p_value"])} for s, r in sig.items()},
            )
            validate_geojson(text)
            (out / "precipitation_correlation.geojson").write_text(text, encoding="utf-8")
            notes["geojson"].append("precipitation_correlation.geojson")

    group_path = out / "extrema_groups.csv"
    groups = tables.read_extrema_groups(group_path) if group_path.is_file() else None
    group_curves = {}
    if groups is not None:
        for name, members in (("high", groups.group_high), ("low", groups.group_low)):
            group_curves[name] = {s: reconstruct(model, betas[s]) for s in sorted(members)}
    covariate_curves, flows, cov_grid = {}, {}, None
    cov_path = out / "covariate_series.csv"
    if cov_path.is_file():
        covariates = tables.read_covariate_series(cov_path)
        pmodel_path = out / "covariate_model.json"
        if pmodel_path.is_file() and groups is not None:
            pmodel = _read_model(pmodel_path)
            cov_grid = pmodel.grid
            low = {}
            for sid in sorted(groups.group_low):
                key = (CovariateKind.PRECIPITATION.value, sid)
                if key in covariates:
                    s = window_subset(covariates[key], cfg.provinces()[0])
                    if len(s):
                        low[sid] = reconstruct(pmodel, pace_scores(s, pmodel))
            covariate_curves["precipitation_low_group"] = low
        flows = {sid: s.values for (k, sid), s in covariates.items() if k == CovariateKind.RIVER_FLOW.value}
    paths, plot_notes = export_curves_svg(model, out / "plots", group_curves, covariate_curves, flows, cov_grid)
    notes["plots"] = sorted(p.name for p in paths)
    if plot_notes:
        notes["plot_notes"] = plot_notes
    return notes


def run_pipeline(cfg: RunConfig) -> dict[str, dict]:
    """Run every stage in order; returns the notes of each stage."""
    _out(cfg).mkdir(parents=True, exist_ok=True)
    _update_log(cfg, "run", {"stages": list(STAGES)}, fresh=True)
    results = {}
    for name, fn in zip(STAGES, (ingest, preprocess, fit, scores, associate, export)):
        results[name] = fn(cfg)
    return results

