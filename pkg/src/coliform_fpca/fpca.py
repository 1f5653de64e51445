"""Sparse functional PCA by conditional expectation.

Pipeline of a fit::

    mean (1D local-linear on the pooled scatter)
    -> raw centred cross products per site
    -> covariance surface (2D local-linear, off-diagonal products only)
    -> measurement-error variance (diagonal smoother minus surface diagonal)
    -> weighted eigenproblem under trapezoidal quadrature
    -> K by cumulative fraction of variance explained, capped at n - 2

Scores for a sparse site are the best linear predictor of its component
coordinates under a Gaussian model; dense sites can also be scored by
direct quadrature, which serves as an independent check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AllCandidatesDegenerate,
    DegenerateLocalDesign,
    EmptySeries,
    InvalidParams,
    NoPositiveEigenvalues,
    NotDense,
    TooFewSites,
)
from .preprocess import WeeklySeries
from .smooth import aggregate, geometric_candidates, local_linear_1d, local_linear_2d, select_bandwidth_cv

_EIG_ZERO = 1e-12
_SINGULAR_COND = 1e12


@dataclass(frozen=True)
class FpcaConfig:
    fve_threshold: float = 0.95
    k_override: int | None = None
    bandwidth_candidates: tuple[float, ...] | None = None
    bw_mean: float | None = None
    bw_cov: float | None = None
    bw_diag: float | None = None
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.fve_threshold <= 1.0:
            raise InvalidParams(f"fve_threshold must lie in (0, 1], got {self.fve_threshold}")
        if self.k_override is not None and self.k_override < 1:
            raise InvalidParams("k_override must be at least 1")
        if self.bandwidth_candidates is not None and any(h <= 0 for h in self.bandwidth_candidates):
            raise InvalidParams("bandwidth candidates must be positive")


@dataclass(frozen=True)
class FpcaModel:
    """A fitted model. ``lam``/``phi`` hold every positive eigenpair;
    the first ``K`` are the selected components."""

    grid: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    phi: np.ndarray
    sigma2: float
    quad_weights: np.ndarray
    fve: np.ndarray
    K: int
    n_sites: int = 0
    bandwidths: Mapping[str, object] = field(default_factory=dict)
    cov: np.ndarray | None = None

    @property
    def components(self) -> np.ndarray:
        return self.phi[: self.K]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.lam[: self.K]

    def index_of(self, weeks: Iterable[float]) -> np.ndarray:
        lookup = {float(g): i for i, g in enumerate(self.grid)}
        try:
            return np.array([lookup[float(w)] for w in weeks], dtype=int)
        except KeyError as exc:
            raise InvalidParams(f"week {exc.args[0]} is not on the model grid") from None

    def to_dict(self) -> dict:
        return {
            "grid": [float(g) for g in self.grid],
            "mu": [float(v) for v in self.mu],
            "lambda": [float(v) for v in self.lam],
            "phi": [[float(v) for v in row] for row in self.phi],
            "sigma2": float(self.sigma2),
            "quad_weights": [float(v) for v in self.quad_weights],
            "fve": [float(v) for v in self.fve],
            "K": int(self.K),
            "n_sites": int(self.n_sites),
            "bandwidths": {k: _jsonable(v) for k, v in self.bandwidths.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "FpcaModel":
        return cls(
            grid=np.asarray(d["grid"], dtype=float),
            mu=np.asarray(d["mu"], dtype=float),
            lam=np.asarray(d["lambda"], dtype=float),
            phi=np.asarray(d["phi"], dtype=float).reshape(len(d["lambda"]), len(d["grid"])),
            sigma2=float(d["sigma2"]),
            quad_weights=np.asarray(d["quad_weights"], dtype=float),
            fve=np.asarray(d["fve"], dtype=float),
            K=int(d["K"]),
            n_sites=int(d.get("n_sites", 0)),
            bandwidths=dict(d.get("bandwidths", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "FpcaModel":
        return cls.from_dict(json.loads(text))


def _jsonable(v):
    if isinstance(v, (tuple, list, np.ndarray)):
        return [float(x) for x in v]
    return None if v is None else float(v)


def trapezoid_weights(grid: Sequence[float]) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if len(g) == 1:
        return np.ones(1)
    d = np.diff(g)
    w = np.zeros(len(g))
    w[:-1] += d / 2.0
    w[1:] += d / 2.0
    return w


def common_grid(series: Sequence[WeeklySeries]) -> np.ndarray:
    windows = {s.window for s in series}
    if len(windows) != 1:
        raise InvalidParams(f"series span several windows: {sorted(windows)}")
    first, last = windows.pop()
    return np.arange(first, last + 1, dtype=float)


def _choose(x, y, w, candidates, admissible, folds, seed):
    """Keep candidates that give a non-degenerate fit on the output grid,
    then cross-validate among them."""
    ok = []
    for h in candidates:
        try:
            admissible(h)
        except DegenerateLocalDesign:
            continue
        ok.append(h)
    if not ok:
        raise AllCandidatesDegenerate(f"no admissible bandwidth among {list(candidates)}")
    if len(ok) == 1:
        return ok[0]
    try:
        return select_bandwidth_cv(x, y, ok, folds, seed, w)
    except AllCandidatesDegenerate:
        # too few design points to hold any out: take the widest admissible
        return ok[-1]


def _candidates(config: FpcaConfig, grid: np.ndarray) -> list[float]:
    if config.bandwidth_candidates is not None:
        return sorted(float(h) for h in config.bandwidth_candidates)
    return [float(h) for h in geometric_candidates(grid)]


def estimate_mean(
    series: Sequence[WeeklySeries],
    grid: np.ndarray | None = None,
    config: FpcaConfig = FpcaConfig(),
) -> tuple[np.ndarray, float]:
    """Smoothed mean curve on ``grid`` and the bandwidth used."""
    if len(series) < 3:
        raise TooFewSites(f"need at least 3 sites for a mean curve, got {len(series)}")
    grid = common_grid(series) if grid is None else np.asarray(grid, dtype=float)
    t = np.concatenate([s.weeks for s in series])
    y = np.concatenate([s.array for s in series])
    ux, uy, uw = aggregate(t, y)
    h = config.bw_mean
    if h is None:
        h = _choose(
            ux, uy, uw, _candidates(config, grid),
            lambda h: local_linear_1d(ux, uy, h, grid, uw),
            config.cv_folds, config.seed,
        )
    return local_linear_1d(ux, uy, h, grid, uw), float(h)


def raw_covariances(series: Sequence[WeeklySeries], mu: np.ndarray, grid: np.ndarray):
    """Centred cross products of every site's observed week pairs.

    Returns ``(off_x, off_y, diag_x, diag_y)``: off-diagonal pairs ``(j, l)``
    with ``j != l`` in both orientations as an ``(m, 2)`` design, and the
    squared residuals at ``j == l`` as a 1D design.
    """
    grid = np.asarray(grid, dtype=float)
    lookup = {float(g): i for i, g in enumerate(grid)}
    off_x, off_y, diag_x, diag_y = [], [], [], []
    for s in series:
        t = s.weeks
        if not len(t):
            continue
        r = s.array - mu[[lookup[float(w)] for w in t]]
        prod = np.outer(r, r)
        jj, ll = np.meshgrid(np.arange(len(t)), np.arange(len(t)), indexing="ij")
        mask = jj != ll
        off_x.append(np.column_stack([t[jj[mask]], t[ll[mask]]]))
        off_y.append(prod[mask])
        diag_x.append(t)
        diag_y.append(r * r)
    cat = lambda parts, shape: np.concatenate(parts) if parts else np.empty(shape)  # noqa: E731
    return cat(off_x, (0, 2)), cat(off_y, (0,)), cat(diag_x, (0,)), cat(diag_y, (0,))


def estimate_covariance_surface(
    off_x: np.ndarray,
    off_y: np.ndarray,
    grid: np.ndarray,
    config: FpcaConfig = FpcaConfig(),
) -> tuple[np.ndarray, float]:
    if len(off_y) == 0:
        raise InvalidParams("no off-diagonal cross products to smooth")
    grid = np.asarray(grid, dtype=float)
    ux, uy, uw = aggregate(off_x, off_y)
    h = config.bw_cov
    if h is None:
        h = _choose(
            ux, uy, uw, _candidates(config, grid),
            lambda h: local_linear_2d(ux, uy, h, grid, w=uw),
            config.cv_folds, config.seed,
        )
    return local_linear_2d(ux, uy, h, grid, w=uw, symmetric=True), float(h)


def middle_half(grid: np.ndarray) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    lo, hi = g[0] + 0.25 * (g[-1] - g[0]), g[0] + 0.75 * (g[-1] - g[0])
    return (g >= lo) & (g <= hi)


def estimate_error_variance(
    diag_x: np.ndarray,
    diag_y: np.ndarray,
    G: np.ndarray,
    grid: np.ndarray,
    config: FpcaConfig = FpcaConfig(),
) -> tuple[float, float]:
    """Measurement-error variance: average of (smoothed diagonal - G(t, t))
    over the middle half of the grid, clamped at 0."""
    if len(diag_y) == 0:
        raise InvalidParams("no diagonal raw covariances")
    grid = np.asarray(grid, dtype=float)
    ux, uy, uw = aggregate(diag_x, diag_y)
    h = config.bw_diag
    if h is None:
        h = _choose(
            ux, uy, uw, _candidates(config, grid),
            lambda h: local_linear_1d(ux, uy, h, grid, uw),
            config.cv_folds, config.seed,
        )
    V = local_linear_1d(ux, uy, h, grid, uw)
    mid = middle_half(grid)
    return max(0.0, float(np.mean(V[mid] - np.diag(G)[mid]))), float(h)


def eigen_decompose(G: np.ndarray, quad_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positive eigenpairs of the covariance operator under quadrature weights.

    Returns eigenvalues (descending) and eigenfunctions as rows, each of unit
    weighted norm with a non-negative weighted integral (ties at zero broken
    by a non-negative first value).
    """
    G = np.asarray(G, dtype=float)
    w = np.asarray(quad_weights, dtype=float)
    sw = np.sqrt(w)
    A = sw[:, None] * G * sw[None, :]
    A = (A + A.T) / 2.0
    vals, vecs = np.linalg.eigh(A)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    top = vals[0] if len(vals) else 0.0
    keep = vals > max(_EIG_ZERO * abs(top), 0.0)
    if top <= 0 or not keep.any():
        raise NoPositiveEigenvalues("covariance surface has no positive eigenvalues")
    vals, vecs = vals[keep], vecs[:, keep]
    phi = (vecs / sw[:, None]).T
    for k in range(len(phi)):
        phi[k] /= math.sqrt(float(np.sum(w * phi[k] ** 2)))
        total = float(np.sum(w * phi[k]))
        if total < -1e-12 or (abs(total) <= 1e-12 and phi[k][0] < 0):
            phi[k] = -phi[k]
    return vals, phi


def select_k_fve(
    lam: Sequence[float],
    threshold: float = 0.95,
    k_cap: int | None = None,
    k_override: int | None = None,
) -> tuple[int, np.ndarray]:
    """Smallest K whose cumulative FVE reaches ``threshold``.

    ``k_override`` replaces the FVE rule; both are clamped to ``k_cap`` and
    to the number of eigenvalues.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0:
        raise InvalidParams("no eigenvalues")
    fve = np.cumsum(lam) / np.sum(lam)
    if k_override is not None:
        K = int(k_override)
    else:
        # guard against cumulative sums landing a few ulps under the threshold
        hit = np.flatnonzero(fve >= threshold - 1e-12)
        K = int(hit[0]) + 1 if hit.size else len(lam)
    if k_cap is not None:
        K = min(K, int(k_cap))
    return max(1, min(K, len(lam))), fve


def fit_fpca(
    series: Sequence[WeeklySeries] | Mapping[str, WeeklySeries],
    config: FpcaConfig = FpcaConfig(),
    grid: np.ndarray | None = None,
) -> FpcaModel:
    if isinstance(series, Mapping):
        series = list(series.values())
    # fixed site order keeps floating-point sums independent of input order
    series = sorted((s for s in series if len(s)), key=lambda s: s.site_id)
    if len(series) < 3:
        raise TooFewSites(f"need at least 3 non-empty series, got {len(series)}")
    grid = common_grid(series) if grid is None else np.asarray(grid, dtype=float)
    w = trapezoid_weights(grid)
    mu, h_mu = estimate_mean(series, grid, config)
    off_x, off_y, diag_x, diag_y = raw_covariances(series, mu, grid)
    G, h_cov = estimate_covariance_surface(off_x, off_y, grid, config)
    sigma2, h_diag = estimate_error_variance(diag_x, diag_y, G, grid, config)
    lam, phi = eigen_decompose(G, w)
    K, fve = select_k_fve(lam, config.fve_threshold, len(series) - 2, config.k_override)
    return FpcaModel(
        grid=grid,
        mu=mu,
        lam=lam,
        phi=phi,
        sigma2=sigma2,
        quad_weights=w,
        fve=fve,
        K=K,
        n_sites=len(series),
        bandwidths={"mean": h_mu, "cov": h_cov, "diag": h_diag},
        cov=G,
    )


def pace_scores(series: WeeklySeries, model: FpcaModel, sigma2: float | None = None) -> np.ndarray:
    """Conditional-expectation scores ``Lambda Phi' Sigma^-1 (y - mu)``.

    ``sigma2`` overrides the model's error variance. The system is solved in
    the smaller of its two equivalent forms (observations x observations or
    K x K); a numerically singular system gets a ridge of
    ``1e-8 * trace / size`` on its diagonal.
    """
    if len(series) == 0:
        raise EmptySeries(f"site {series.site_id!r} has no observations")
    s2 = model.sigma2 if sigma2 is None else float(sigma2)
    idx = model.index_of(series.values.keys())
    y = series.array - model.mu[idx]
    Phi = model.components[:, idx].T
    lam = model.eigenvalues
    n_obs, K = Phi.shape
    if n_obs > K:
        # push-through identity: Lambda Phi'(Phi Lambda Phi' + s2 I)^-1 = (Lambda Phi'Phi + s2 I)^-1 Lambda Phi'
        A = lam[:, None] * (Phi.T @ Phi) + s2 * np.eye(K)
        if np.linalg.cond(A) < _SINGULAR_COND:
            return np.linalg.solve(A, lam * (Phi.T @ y))
    S = (Phi * lam) @ Phi.T + s2 * np.eye(n_obs)
    if np.linalg.cond(S) >= _SINGULAR_COND:
        S = S + 1e-8 * np.trace(S) / n_obs * np.eye(n_obs)
    return lam * (Phi.T @ np.linalg.solve(S, y))


def integral_scores(series: WeeklySeries, model: FpcaModel) -> np.ndarray:
    """Quadrature scores; the series must be observed at every grid point."""
    if len(series) != len(model.grid) or set(map(float, series.values)) != set(map(float, model.grid)):
        raise NotDense(f"site {series.site_id!r} is not observed on the whole grid")
    idx = model.index_of(series.values.keys())
    x = np.empty(len(model.grid))
    x[idx] = series.array
    return model.components @ (model.quad_weights * (x - model.mu))


def reconstruct(model: FpcaModel, beta: Sequence[float], weeks: Sequence[float] | None = None) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.K,):
        raise InvalidParams(f"expected {model.K} scores, got {beta.shape}")
    idx = np.arange(len(model.grid)) if weeks is None else model.index_of(weeks)
    return model.mu[idx] + beta @ model.components[:, idx]


def score_all(series: Mapping[str, WeeklySeries], model: FpcaModel) -> dict[str, np.ndarray]:
    return {sid: pace_scores(series[sid], model) for sid in sorted(series) if len(series[sid])}
