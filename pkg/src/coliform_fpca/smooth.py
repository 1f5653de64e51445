"""Local-linear kernel smoothers in one and two dimensions.

Scatter data are plain arrays: design coordinates ``x`` of shape ``(n,)``
(1D) or ``(n, 2)`` (2D), responses ``y`` and optional positive multiplicity
weights ``w``. Repeated design points are merged into one point carrying
the summed weight and the weighted mean response before fitting; the
weighted least-squares fit is unchanged by this, and it keeps the covariance
surface fit small when thousands of sites share a weekly grid.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import AllCandidatesDegenerate, DegenerateLocalDesign, InvalidParams

_CHUNK = 256
_COND_FLOOR = 1e-10


def epanechnikov(u: np.ndarray) -> np.ndarray:
    return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)


def aggregate(x: np.ndarray, y: np.ndarray, w: np.ndarray | None = None):
    """Merge duplicate design points: returns (unique x, weighted mean y, summed w)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise InvalidParams("multiplicity weights must be positive")
    if x.shape[0] != y.shape[0] or w.shape[0] != y.shape[0]:
        raise InvalidParams("x, y and w lengths differ")
    if x.ndim == 1:
        ux, inv = np.unique(x, return_inverse=True)
    else:
        ux, inv = np.unique(x, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    sw = np.bincount(inv, weights=w, minlength=len(ux))
    swy = np.bincount(inv, weights=w * y, minlength=len(ux))
    return ux, swy / sw, sw


def _as_pair(h) -> tuple[float, float]:
    if np.ndim(h) == 0:
        return float(h), float(h)
    hs, ht = h
    return float(hs), float(ht)


def local_linear_1d(
    x: np.ndarray,
    y: np.ndarray,
    h: float,
    eval_points: np.ndarray,
    w: np.ndarray | None = None,
) -> np.ndarray:
    """Intercepts of Epanechnikov-weighted line fits centred at each eval point.

    Raises DegenerateLocalDesign when fewer than two distinct design points
    carry positive kernel weight at some eval point.
    """
    if not h > 0:
        raise InvalidParams(f"bandwidth must be positive, got {h}")
    ux, uy, uw = aggregate(x, y, w)
    e = np.atleast_1d(np.asarray(eval_points, dtype=float))
    out = np.empty(len(e))
    for start in range(0, len(e), _CHUNK):
        ec = e[start:start + _CHUNK]
        d = ux[None, :] - ec[:, None]
        k = epanechnikov(d / h) * uw[None, :]
        support = np.count_nonzero(k > 0, axis=1)
        bad = np.flatnonzero(support < 2)
        if bad.size:
            raise DegenerateLocalDesign(int(start + bad[0]), h)
        s0 = k.sum(axis=1)
        dbar = (k * d).sum(axis=1) / s0
        ybar = (k * uy[None, :]).sum(axis=1) / s0
        dc = d - dbar[:, None]
        sxx = (k * dc * dc).sum(axis=1)
        sxy = (k * dc * (uy[None, :] - ybar[:, None])).sum(axis=1)
        bad = np.flatnonzero(~(sxx > 0))
        if bad.size:
            raise DegenerateLocalDesign(int(start + bad[0]), h)
        out[start:start + _CHUNK] = ybar - (sxy / sxx) * dbar
    return out


def _grid_moments(ux, uy, uw, hs, ht, es, et):
    """Local design moments at every node of ``es x et``.

    The kernel is a product, so each moment is a matrix product over the
    design points. Returns ``m`` of shape (len(es), len(et), 3, 3), the
    right-hand sides (len(es), len(et), 3) and support counts.
    """
    us = (ux[None, :, 0] - es[:, None]) / hs
    ut = (ux[None, :, 1] - et[:, None]) / ht
    ks = epanechnikov(us) * uw[None, :]
    kt = epanechnikov(ut)
    a = [ks, ks * us]
    b = [kt, kt * ut]
    m = np.empty((len(es), len(et), 3, 3))
    m[..., 0, 0] = a[0] @ b[0].T
    m[..., 0, 1] = m[..., 1, 0] = a[1] @ b[0].T
    m[..., 0, 2] = m[..., 2, 0] = a[0] @ b[1].T
    m[..., 1, 1] = (ks * us * us) @ b[0].T
    m[..., 1, 2] = m[..., 2, 1] = a[1] @ b[1].T
    m[..., 2, 2] = a[0] @ (kt * ut * ut).T
    rhs = np.stack([(a[0] * uy) @ b[0].T, (a[1] * uy) @ b[0].T, (a[0] * uy) @ b[1].T], axis=-1)
    support = (ks > 0).astype(float) @ (kt > 0).astype(float).T
    return m, rhs, support


def _solve_nodes(m, rhs, support, h):
    """Intercepts of the local plane fits; ``m`` is (n, 3, 3)."""
    norm = m / np.where(m[:, :1, :1] > 0, m[:, :1, :1], 1.0)
    ev = np.linalg.eigvalsh(norm)
    bad = np.flatnonzero((support < 3) | (ev[:, 0] <= _COND_FLOOR * np.maximum(ev[:, -1], 1e-300)))
    if bad.size:
        raise DegenerateLocalDesign(int(bad[0]), h)
    return np.linalg.solve(m, rhs[:, :, None])[:, 0, 0]


def local_linear_2d(
    x: np.ndarray,
    y: np.ndarray,
    h,
    eval_s: np.ndarray,
    eval_t: np.ndarray | None = None,
    w: np.ndarray | None = None,
    symmetric: bool = False,
) -> np.ndarray:
    """Local plane fit at every node of ``eval_s x eval_t``.

    ``x`` has columns (s, t); ``h`` is a scalar or an ``(h_s, h_t)`` pair and
    the kernel is the product of two Epanechnikov kernels. With
    ``symmetric=True`` the square output is replaced by ``(S + S.T) / 2``.
    """
    hs, ht = _as_pair(h)
    if not (hs > 0 and ht > 0):
        raise InvalidParams(f"bandwidths must be positive, got {h}")
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    ux, uy, uw = aggregate(x, y, w)
    es = np.asarray(eval_s, dtype=float)
    et = es if eval_t is None else np.asarray(eval_t, dtype=float)
    if symmetric and not np.array_equal(es, et):
        raise InvalidParams("symmetric mode needs the same grid on both axes")
    m, rhs, support = _grid_moments(ux, uy, uw, hs, ht, es, et)
    try:
        flat = _solve_nodes(m.reshape(-1, 3, 3), rhs.reshape(-1, 3), support.reshape(-1), (hs, ht))
    except DegenerateLocalDesign as exc:
        raise DegenerateLocalDesign(divmod(exc.index, len(et)), (hs, ht)) from None
    surface = flat.reshape(len(es), len(et))
    if symmetric:
        surface = (surface + surface.T) / 2.0
    return surface


def geometric_candidates(grid: Sequence[float], n: int = 10) -> np.ndarray:
    """``n`` bandwidths spaced geometrically from the grid spacing to half the domain width."""
    g = np.sort(np.asarray(grid, dtype=float))
    if len(g) < 2:
        raise InvalidParams("grid needs at least two points")
    lo = float(np.min(np.diff(g)))
    hi = float(g[-1] - g[0]) / 2.0
    if hi <= lo:
        return np.array([lo])
    return np.geomspace(lo, hi, n)


def _predict(x, y, w, h, at):
    if x.ndim == 1:
        return local_linear_1d(x, y, h, at, w)
    hs, ht = _as_pair(h)
    ux, uy, uw = aggregate(x, y, w)
    at = np.asarray(at, dtype=float)
    es, i = np.unique(at[:, 0], return_inverse=True)
    et, j = np.unique(at[:, 1], return_inverse=True)
    m, rhs, support = _grid_moments(ux, uy, uw, hs, ht, es, et)
    i, j = i.reshape(-1), j.reshape(-1)
    return _solve_nodes(m[i, j], rhs[i, j], support[i, j], (hs, ht))


def cv_errors(
    x: np.ndarray,
    y: np.ndarray,
    candidates: Sequence,
    folds: int = 5,
    seed: int = 0,
    w: np.ndarray | None = None,
) -> np.ndarray:
    """Weighted mean out-of-fold squared prediction error per candidate.

    Infeasible candidates (a degenerate local design in any fold) get ``inf``.
    Folds are a seeded random partition of the points, clamped to ``n``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    n = len(y)
    k = min(int(folds), n)
    if k < 2:
        raise AllCandidatesDegenerate(f"cannot cross-validate {n} point(s)")
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % k
    errors = np.empty(len(candidates))
    for c, h in enumerate(candidates):
        total = 0.0
        try:
            for f in range(k):
                test = fold_of == f
                train = ~test
                xt = x[test]
                if x.ndim == 1:
                    at, inv = np.unique(xt, return_inverse=True)
                else:
                    at, inv = np.unique(xt, axis=0, return_inverse=True)
                pred = _predict(x[train], y[train], w[train], h, at)[inv.reshape(-1)]
                total += float(np.sum(w[test] * (y[test] - pred) ** 2))
        except DegenerateLocalDesign:
            errors[c] = np.inf
            continue
        errors[c] = total / float(np.sum(w))
    return errors


def select_bandwidth_cv(
    x: np.ndarray,
    y: np.ndarray,
    candidates: Sequence,
    folds: int = 5,
    seed: int = 0,
    w: np.ndarray | None = None,
):
    """Candidate with the smallest CV error; near-ties go to the larger bandwidth."""
    if len(candidates) < 2:
        raise InvalidParams("need at least two bandwidth candidates")
    errors = cv_errors(x, y, candidates, folds, seed, w)
    finite = np.isfinite(errors)
    if not finite.any():
        raise AllCandidatesDegenerate(f"every candidate bandwidth {list(candidates)} is degenerate")
    yy = np.asarray(y, dtype=float)
    atol = 1e-12 * max(float(np.mean(yy * yy)), 1e-300)
    best = errors[finite].min()
    tied = [i for i in np.flatnonzero(finite) if errors[i] <= best + 1e-9 * best + atol]
    pick = max(tied, key=lambda i: np.prod(_as_pair(candidates[i])))
    return candidates[pick]
