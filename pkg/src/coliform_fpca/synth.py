"""Synthetic sparse longitudinal data from a known Karhunen-Loeve model.

Random numbers come from numpy's PCG64 bit generator seeded per site with
``SeedSequence([seed, site_index])`` (identifier ``RNG_ALGORITHM``), so a
site's draws do not depend on how many other sites are generated or in
which order. Per site the draw order is: K standard normals for the
scores, then whole-mask proposals until one passes the gap rule, then one
standard normal per observed week for the noise.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidParams
from .fpca import FpcaModel, trapezoid_weights
from .preprocess import N_WEEKS, Scale, WeeklySeries
from .store import (
    CovariateKind,
    CovariateRecord,
    Province,
    SampleRecord,
    SiteInfo,
    format_covariates,
    format_samples,
    format_site_covariate_map,
    format_sites,
)

RNG_ALGORITHM = "numpy.PCG64/SeedSequence([seed, site_index])"
_MAX_MASK_TRIES = 10_000


@dataclass(frozen=True)
class KlParams:
    grid: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    lam: np.ndarray
    sigma2: float

    @property
    def quad_weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid)

    def validate(self) -> None:
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) != 1.0) or g[0] < 1 or g[-1] > N_WEEKS:
            raise InvalidParams("grid must be consecutive weeks inside 1..52")
        phi = np.atleast_2d(self.phi)
        if self.mu.shape != g.shape or phi.shape[1] != len(g) or len(self.lam) != phi.shape[0]:
            raise InvalidParams("mu/phi/lam shapes do not match the grid")
        if np.any(np.asarray(self.lam) <= 0) or np.any(np.diff(self.lam) >= 0):
            raise InvalidParams("eigenvalues must be positive and strictly descending")
        if self.sigma2 < 0:
            raise InvalidParams("sigma2 must be non-negative")
        gram = (phi * self.quad_weights) @ phi.T
        if np.max(np.abs(gram - np.eye(len(phi)))) > 1e-8:
            raise InvalidParams("eigenfunctions are not orthonormal under the quadrature weights")


def orthonormalize(vectors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gram-Schmidt (applied twice) under the weighted inner product."""
    out = []
    for v in np.atleast_2d(np.asarray(vectors, dtype=float)):
        u = v.copy()
        for _ in range(2):
            for q in out:
                u = u - np.sum(weights * u * q) * q
        u /= math.sqrt(float(np.sum(weights * u * u)))
        out.append(u)
    return np.array(out)


def standard_params(
    lam: Sequence[float] = (1.0, 0.25),
    sigma2: float = 0.04,
    window: tuple[int, int] = (1, N_WEEKS),
) -> KlParams:
    """Mean 2 + sin(2 pi t / 52); components proportional to 1 and sin(2 pi t / 52)."""
    grid = np.arange(window[0], window[1] + 1, dtype=float)
    wave = np.sin(2.0 * np.pi * grid / 52.0)
    w = trapezoid_weights(grid)
    basis = [np.ones_like(grid), wave, np.cos(2.0 * np.pi * grid / 52.0)][: len(lam)]
    return KlParams(grid, 2.0 + wave, orthonormalize(np.array(basis), w), np.asarray(lam, dtype=float), sigma2)


@dataclass(frozen=True)
class KlTruth:
    grid: np.ndarray
    mu_true: np.ndarray
    phi_true: np.ndarray
    lambda_true: np.ndarray
    sigma2_true: float
    beta_true: Mapping[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0

    @property
    def quad_weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid)

    def as_model(self) -> FpcaModel:
        """The truth dressed as a fitted model, for identity checks."""
        lam = np.asarray(self.lambda_true, dtype=float)
        return FpcaModel(
            grid=np.asarray(self.grid, dtype=float),
            mu=np.asarray(self.mu_true, dtype=float),
            lam=lam,
            phi=np.atleast_2d(self.phi_true),
            sigma2=float(self.sigma2_true),
            quad_weights=self.quad_weights,
            fve=np.cumsum(lam) / lam.sum(),
            K=len(lam),
            n_sites=len(self.beta_true),
        )

    def to_json(self) -> str:
        doc = {
            "rng_algorithm": RNG_ALGORITHM,
            "seed": self.seed,
            "grid": [float(g) for g in self.grid],
            "mu_true": [float(v) for v in self.mu_true],
            "phi_true": [[float(v) for v in row] for row in np.atleast_2d(self.phi_true)],
            "lambda_true": [float(v) for v in self.lambda_true],
            "sigma2_true": float(self.sigma2_true),
            "beta_true": {k: [float(b) for b in v] for k, v in sorted(self.beta_true.items())},
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "KlTruth":
        d = json.loads(text)
        return cls(
            grid=np.asarray(d["grid"], dtype=float),
            mu_true=np.asarray(d["mu_true"], dtype=float),
            phi_true=np.asarray(d["phi_true"], dtype=float),
            lambda_true=np.asarray(d["lambda_true"], dtype=float),
            sigma2_true=float(d["sigma2_true"]),
            beta_true={k: np.asarray(v, dtype=float) for k, v in d["beta_true"].items()},
            seed=int(d.get("seed", 0)),
        )


def site_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def _longest_false_run(mask: np.ndarray) -> int:
    longest = run = 0
    for seen in mask:
        run = 0 if seen else run + 1
        longest = max(longest, run)
    return longest


def draw_mask(rng: np.random.Generator, n_weeks: int, observe_prob: float, max_gap: int) -> np.ndarray:
    for _ in range(_MAX_MASK_TRIES):
        mask = rng.random(n_weeks) < observe_prob
        if _longest_false_run(mask) < max_gap:
            return mask
    raise InvalidParams(
        f"no mask without a {max_gap}-week gap after {_MAX_MASK_TRIES} tries; raise observe_prob"
    )


def simulate_kl(
    params: KlParams,
    n_sites: int,
    observe_prob: float,
    max_gap: int = 4,
    seed: int = 0,
    zero_scores: bool = False,
) -> tuple[dict[str, WeeklySeries], KlTruth]:
    params.validate()
    if n_sites < 1:
        raise InvalidParams("n_sites must be positive")
    if not 0.0 < observe_prob <= 1.0:
        raise InvalidParams(f"observe_prob must lie in (0, 1], got {observe_prob}")
    if max_gap < 1:
        raise InvalidParams("max_gap must be positive")
    grid = np.asarray(params.grid, dtype=float)
    phi = np.atleast_2d(params.phi)
    sd = np.sqrt(np.asarray(params.lam, dtype=float))
    noise_sd = math.sqrt(params.sigma2)
    width = max(4, len(str(n_sites)))
    window = (int(grid[0]), int(grid[-1]))
    series: dict[str, WeeklySeries] = {}
    betas: dict[str, np.ndarray] = {}
    for i in range(n_sites):
        rng = site_rng(seed, i)
        beta = rng.standard_normal(len(sd)) * sd
        if zero_scores:
            beta = np.zeros_like(beta)
        mask = draw_mask(rng, len(grid), observe_prob, max_gap)
        x = params.mu + beta @ phi
        noise = rng.standard_normal(int(mask.sum())) * noise_sd
        obs = x[mask] + noise
        site_id = f"S{i:0{width}d}"
        series[site_id] = WeeklySeries(
            site_id, window, dict(zip(grid[mask].astype(int).tolist(), obs.tolist())), Scale.LOG10_COUNT
        )
        betas[site_id] = beta
    truth = KlTruth(grid, np.asarray(params.mu, dtype=float), phi, np.asarray(params.lam, dtype=float),
                    float(params.sigma2), betas, seed)
    return series, truth


# ---- recovery scoring ------------------------------------------------------


@dataclass
class RecoveryReport:
    n_components: int
    k_mismatch: bool
    alignment: list[float]
    score_corr: list[float]
    lambda_rel_error: list[float]
    sigma2_error: float
    mu_max_error: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def recovery_report(
    model: FpcaModel,
    truth: KlTruth,
    scores: Mapping[str, Sequence[float]] | None = None,
) -> RecoveryReport:
    """Compare a fitted model with the generating truth.

    Covers ``min(model.K, true K)`` components. ``sigma2_error`` is relative
    when the true variance is positive, absolute otherwise. Score
    correlations need ``scores`` (fitted, keyed like ``truth.beta_true``).
    """
    if model.grid.shape != truth.grid.shape or not np.allclose(model.grid, truth.grid):
        raise DimensionMismatch("model and truth grids differ")
    phi_true = np.atleast_2d(truth.phi_true)
    k_true = len(truth.lambda_true)
    n = min(model.K, k_true)
    w = truth.quad_weights
    align, signs, corr, lam_err = [], [], [], []
    for k in range(n):
        ip = float(np.sum(w * model.phi[k] * phi_true[k]))
        align.append(abs(ip))
        signs.append(1.0 if ip >= 0 else -1.0)
        lam_err.append(abs(float(model.lam[k]) - float(truth.lambda_true[k])) / float(truth.lambda_true[k]))
    if scores is not None:
        ids = sorted(set(scores) & set(truth.beta_true))
        if len(ids) < 2:
            raise DimensionMismatch("need at least two scored sites shared with the truth")
        fitted = np.array([np.asarray(scores[s], dtype=float)[:n] for s in ids])
        true = np.array([np.asarray(truth.beta_true[s], dtype=float)[:n] for s in ids])
        for k in range(n):
            corr.append(float(np.corrcoef(signs[k] * fitted[:, k], true[:, k])[0, 1]))
    s2 = float(truth.sigma2_true)
    s2_err = abs(model.sigma2 - s2) / s2 if s2 > 0 else abs(model.sigma2 - s2)
    return RecoveryReport(
        n_components=n,
        k_mismatch=model.K != k_true,
        alignment=align,
        score_corr=corr,
        lambda_rel_error=lam_err,
        sigma2_error=s2_err,
        mu_max_error=float(np.max(np.abs(model.mu - truth.mu_true))),
    )


# ---- synthetic input files -------------------------------------------------

_BC_BOX = ((48.3, 54.5), (-133.0, -123.0))
_YEARS = range(2000, 2019)


def _sample_date(year: int, week: int) -> dt.date:
    # day-of-year 7(week - 1) + 4 sits in the middle of its week
    return dt.date(year, 1, 1) + dt.timedelta(days=7 * (week - 1) + 3)


def synthetic_inputs(
    series: Mapping[str, WeeklySeries],
    seed: int = 0,
    province: Province = Province.BC,
    with_covariates: bool = False,
) -> dict[str, str]:
    """Render simulated series as the raw CSV inputs of the pipeline.

    Each observed week becomes one sample with count ``10 ** value``, so the
    pipeline's weekly mean followed by log10 gives the simulated value back.
    With covariates, every site gets a precipitation location whose 5-day
    sums track that site's curve, and all sites share one river.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1 << 20])))
    samples: list[SampleRecord] = []
    sites: dict[str, SiteInfo] = {}
    precip: list[CovariateRecord] = []
    mapping: dict[CovariateKind, dict[str, str]] = {k: {} for k in CovariateKind}
    for n, site_id in enumerate(sorted(series)):
        (lat_lo, lat_hi), (lon_lo, lon_hi) = _BC_BOX
        sites[site_id] = SiteInfo(
            round(float(rng.uniform(lat_lo, lat_hi)), 6), round(float(rng.uniform(lon_lo, lon_hi)), 6), province
        )
        s = series[site_id]
        centre = float(np.mean(s.array)) if len(s) else 0.0
        sign = 1.0 if n % 2 == 0 else -1.0
        for j, (week, value) in enumerate(s.values.items()):
            year = _YEARS[(n + j) % len(_YEARS)]
            date = _sample_date(year, week)
            samples.append(SampleRecord(site_id, date, 10.0 ** value))
            if with_covariates:
                level = max(0.0, 3.0 + sign * 2.0 * (value - centre))
                for lag in range(1, 6):
                    day = date - dt.timedelta(days=lag)
                    amount = max(0.0, level + float(rng.normal(0.0, 0.3)))
                    precip.append(CovariateRecord(f"P{site_id}", day, round(amount, 4), CovariateKind.PRECIPITATION))
        if with_covariates:
            mapping[CovariateKind.PRECIPITATION][site_id] = f"P{site_id}"
            mapping[CovariateKind.RIVER_FLOW][site_id] = "R1"
    out = {"samples.csv": format_samples(samples), "sites.csv": format_sites(sites)}
    if with_covariates:
        flows = []
        day = dt.date(2005, 1, 1)
        while day.year < 2007:
            doy = day.timetuple().tm_yday
            value = 500.0 + 300.0 * math.sin(2.0 * math.pi * doy / 365.0) + float(rng.normal(0.0, 20.0))
            flows.append(CovariateRecord("R1", day, round(max(0.0, value), 3), CovariateKind.RIVER_FLOW))
            day += dt.timedelta(days=1)
        out["precipitation.csv"] = format_covariates(precip)
        out["flow.csv"] = format_covariates(flows)
        out["site_covariate_map.csv"] = format_site_covariate_map(mapping)
    return out


def write_synthetic(
    out_dir: Path | str,
    n_sites: int = 400,
    observe_prob: float = 0.6,
    seed: int = 0,
    params: KlParams | None = None,
    with_covariates: bool = False,
    max_gap: int = 4,
) -> dict[str, Path]:
    params = params or standard_params()
    series, truth = simulate_kl(params, n_sites, observe_prob, max_gap, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, text in synthetic_inputs(series, seed, with_covariates=with_covariates).items():
        (out / name).write_text(text, encoding="utf-8")
        written[name] = out / name
    (out / "truth.json").write_text(truth.to_json(), encoding="utf-8")
    written["truth.json"] = out / "truth.json"
    return written
