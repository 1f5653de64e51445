"""Acceptance criteria, one group of tests per criterion.

Test names start with ``test_c<N>_`` so the terminal summary can print one
PASS/FAIL line per criterion (see conftest.py). Run alone with

    pytest tests/test_acceptance.py -v
"""

from __future__ import annotations

import datetime as dt
import itertools
import json
import math
import time

import numpy as np
import pytest

from coliform_fpca.association import T_APPROX_FACTOR, decile_bins, extrema_groups, p_value_bin, spearman
from coliform_fpca.config import RunConfig
from coliform_fpca.errors import DegenerateLocalDesign
from coliform_fpca.export import validate_geojson
from coliform_fpca.fpca import (
    FpcaConfig,
    fit_fpca,
    integral_scores,
    pace_scores,
    reconstruct,
    score_all,
    select_k_fve,
)
from coliform_fpca.pipeline import run_pipeline
from coliform_fpca.preprocess import (
    Disposition,
    WeeklySeries,
    apply_exclusions,
    cumulative_precip,
    gap_filter,
    log_transform,
    week_of,
    window_subset,
)
from coliform_fpca.smooth import local_linear_1d, local_linear_2d
from coliform_fpca.store import CovariateKind, CovariateRecord, SampleRecord
from coliform_fpca.synth import KlParams, recovery_report, simulate_kl, standard_params, write_synthetic

# ---- 1. synthetic recovery -------------------------------------------------


@pytest.fixture(scope="module")
def recovery():
    start = time.perf_counter()
    series, truth = simulate_kl(standard_params(), n_sites=400, observe_prob=0.6, seed=0)
    model = fit_fpca(series)
    scores = score_all(series, model)
    elapsed = time.perf_counter() - start
    return model, truth, series, recovery_report(model, truth, scores), elapsed


def test_c1_fve_two_components(recovery):
    model = recovery[0]
    assert model.fve[1] >= 0.90


def test_c1_component_alignment(recovery):
    report = recovery[3]
    assert report.n_components == 2
    assert min(report.alignment) >= 0.95, report.alignment


def test_c1_score_correlation_fpc1(recovery):
    assert recovery[3].score_corr[0] >= 0.90


def test_c1_score_correlation_fpc2(recovery):
    # Known to fail: see test_fpc2_score_ceiling_of_the_generating_model below.
    assert recovery[3].score_corr[1] >= 0.90, recovery[3].score_corr


def test_c1_sigma2(recovery):
    assert 0.02 <= recovery[0].sigma2 <= 0.06


def test_c1_mean_error(recovery):
    assert recovery[3].mu_max_error <= 0.1


def test_c1_wall_clock(recovery):
    assert recovery[4] < 60.0


def test_fpc2_score_ceiling_of_the_generating_model(recovery):
    """Scoring with the exact generating model (true mean, components,
    eigenvalues and noise) gives the highest correlation any predictor of
    the scores can reach on this design. It already sits below 0.90 for the
    second component, and the fitted model comes within 0.01 of it."""
    model, truth, series, report, _ = recovery
    oracle = truth.as_model()
    oracle_scores = {sid: pace_scores(s, oracle) for sid, s in series.items()}
    ceiling = recovery_report(oracle, truth, oracle_scores).score_corr
    assert ceiling[1] < 0.90
    assert abs(report.score_corr[1] - ceiling[1]) <= 0.01
    # population value: E over masks of lam2 * phi'phi / (lam2 * phi'phi + sigma2), here about 0.891^2
    lam2, s2 = truth.lambda_true[1], truth.sigma2_true
    phi2 = truth.phi_true[1]
    r = np.random.default_rng(1)
    gains = []
    for _ in range(4000):
        mask = r.random(52) < 0.6
        a = lam2 * float(phi2[mask] @ phi2[mask])
        gains.append(a / (a + s2))
    assert math.sqrt(np.mean(gains)) < 0.90


# ---- 2. smoother exactness -------------------------------------------------


def test_c2_affine_1d():
    r = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        x = np.sort(r.uniform(0, 52, int(r.integers(20, 80))))
        a, b = r.uniform(-10, 10, 2)
        h = float(r.uniform(4, 40))
        at = np.linspace(x[0], x[-1], 25)
        try:
            fit = local_linear_1d(x, a + b * x, h, at)
        except DegenerateLocalDesign:
            h *= 4
            fit = local_linear_1d(x, a + b * x, h, at)
        worst = max(worst, float(np.max(np.abs(fit - (a + b * at)))))
    assert worst <= 1e-10, worst


def test_c2_affine_2d():
    r = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        xy = r.uniform(1, 52, (int(r.integers(150, 400)), 2))
        a, b, c = r.uniform(-10, 10, 3)
        h = (float(r.uniform(8, 40)), float(r.uniform(8, 40)))
        g = np.linspace(4, 48, 12)
        S = local_linear_2d(xy, a + b * xy[:, 0] + c * xy[:, 1], h, g)
        worst = max(worst, float(np.max(np.abs(S - (a + b * g[:, None] + c * g[None, :])))))
    assert worst <= 1e-10, worst


# ---- 3. score-path consistency --------------------------------------------


def _in_span_sites(model, n, seed):
    params = KlParams(model.grid, model.mu, model.components, model.eigenvalues, 0.0)
    series, truth = simulate_kl(params, n, 1.0, seed=seed)
    return series, truth


def test_c3_pace_equals_integral_on_dense_sites(recovery):
    model = recovery[0]
    series, _ = _in_span_sites(model, 50, seed=33)
    worst = max(
        float(np.max(np.abs(pace_scores(s, model, sigma2=1e-12) - integral_scores(s, model))))
        for s in series.values()
    )
    assert worst <= 1e-6, worst


def test_c3_reconstruct_integral_identity(recovery):
    model = recovery[0]
    series, truth = _in_span_sites(model, 50, seed=34)
    worst = 0.0
    for sid, s in series.items():
        beta = integral_scores(s, model)
        worst = max(worst, float(np.max(np.abs(reconstruct(model, beta) - s.array))))
        worst = max(worst, float(np.max(np.abs(beta - truth.beta_true[sid]))))
    assert worst <= 1e-8, worst


# ---- 4. spearman oracle ----------------------------------------------------


def _oracle_midranks(v):
    ordered = sorted(v)
    return tuple(
        sum(i + 1 for i, b in enumerate(ordered) if b == a) / ordered.count(a) for a in v
    )


def _oracle_rho(rx, ry):
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def _tie_patterns(n):
    pats = [tuple(range(1, n + 1)), (1, 1) + tuple(range(2, n))]
    if n >= 4:
        pats.append((1, 1, 2, 2) + tuple(range(3, n - 1)))
    if n >= 4:
        pats.append((1, 1, 1) + tuple(range(2, n - 1)))
    return [p for p in dict.fromkeys(pats) if len(set(p)) > 1]


def _combos(n):
    """Pattern pairs: all of them for n <= 5; for n = 6 the distinct-value
    pattern and the one-tied-pair pattern, each against itself."""
    pats = _tie_patterns(n)
    if n == 6:
        return [(pats[0], pats[0]), (pats[1], pats[1])]
    return list(itertools.product(pats, pats))


def _oracle_rho_matrix(xs, ys):
    """Pearson of brute-force midranks for every (x, y) pair at once."""
    rx = np.array([_oracle_midranks(x) for x in xs])
    ry = np.array([_oracle_midranks(y) for y in ys])
    rx = rx - rx.mean(axis=1, keepdims=True)
    ry = ry - ry.mean(axis=1, keepdims=True)
    den = np.sqrt(np.outer((rx * rx).sum(axis=1), (ry * ry).sum(axis=1)))
    return (rx @ ry.T) / den


def test_c4_spearman_matches_midrank_oracle():
    checked = 0
    worst = 0.0
    for n in range(3, 7):
        for px, py in _combos(n):
            xs = sorted(set(itertools.permutations(px)))
            ys = sorted(set(itertools.permutations(py)))
            expected = _oracle_rho_matrix(xs, ys)
            for i, x in enumerate(xs):
                xa = np.array(x, dtype=float)
                got = np.array([spearman(xa, y)[0] for y in ys])
                worst = max(worst, float(np.max(np.abs(got - expected[i]))))
                checked += len(ys)
    assert checked > 600_000
    assert worst <= 1e-14, worst


def test_c4_t_approximation_within_factor_of_exact():
    worst = 1.0
    for n in range(3, 7):
        pats = _tie_patterns(n)
        for px, py in itertools.product(pats, pats):
            rx = _oracle_midranks(px)
            null = [_oracle_rho(rx, _oracle_midranks(p)) for p in itertools.permutations(py)]
            for y in sorted(set(itertools.permutations(py))):
                rho, p_t = spearman(px, y)
                if abs(rho) > 0.8 + 1e-12:
                    continue
                p_exact = sum(abs(v) >= abs(rho) - 1e-12 for v in null) / len(null)
                worst = max(worst, p_t / p_exact, p_exact / p_t)
    assert worst <= T_APPROX_FACTOR, worst


# ---- 5. preprocessing rules ------------------------------------------------


def _weekly(missing, window=(1, 52)):
    return WeeklySeries("A", window, {w: 1.0 for w in range(window[0], window[1] + 1) if w not in missing})


@pytest.mark.parametrize("missing,keep", [((10, 11, 12, 13), False), ((10, 11, 12), True)])
def test_c5_gap_rule(missing, keep):
    assert gap_filter(_weekly(set(missing))) is keep


@pytest.mark.parametrize("count,disposition", [(1.999, Disposition.BELOW_DETECTION), (2.0, Disposition.RETAINED)])
def test_c5_detection_limit(count, disposition):
    _, report = apply_exclusions([SampleRecord("A", dt.date(2010, 5, 5), count)])
    assert report.dispositions["A"] is disposition


def test_c5_day_365_is_week_52():
    assert week_of(dt.date(2011, 12, 31)) == 52


@pytest.mark.parametrize("province,window", [("BC", (1, 52)), ("QC", (19, 45)), ("NL", (20, 38))])
def test_c5_province_windows(province, window):
    assert window_subset(_weekly(set()), province).window == window


def test_c5_log10_of_100():
    assert log_transform(WeeklySeries("A", (1, 52), {1: 100.0})).values[1] == 2.0


def test_c5_five_day_precipitation_sum():
    day = dt.date(2010, 7, 20)
    rain = [CovariateRecord("P", day - dt.timedelta(days=k), float(k), CovariateKind.PRECIPITATION)
            for k in range(1, 7)]
    out, _ = cumulative_precip(rain, [SampleRecord("A", day, 5.0)], {"A": "P"}, 5)
    assert out["A"].values[week_of(day)] == 15.0


# ---- 6. binning and groups --------------------------------------------------


def test_c6_847_bins():
    r = np.random.default_rng(6)
    scores = {f"S{i:04d}": float(v) for i, v in enumerate(r.standard_normal(847))}
    bins = decile_bins(scores)
    sizes = [list(bins.values()).count(k) for k in range(1, 11)]
    assert set(sizes) == {84, 85} and sizes == [84] * 3 + [85] * 7
    ordered = sorted(scores, key=scores.get)
    assert [bins[s] for s in ordered] == sorted(bins[s] for s in ordered)


def test_c6_extrema_intersections():
    r = np.random.default_rng(60)
    ids = [f"S{i:03d}" for i in range(200)]
    f1 = dict(zip(ids, r.permutation(200).astype(float)))
    f2 = dict(zip(ids, r.permutation(200).astype(float)))
    # hand computation: the 20 largest, and the 20 smallest, of each score
    top1 = {s for s in ids if f1[s] >= 180}
    top2 = {s for s in ids if f2[s] >= 180}
    bot2 = {s for s in ids if f2[s] < 20}
    g = extrema_groups(f1, f2, q=0.1)
    assert g.group_high == top1 & top2 and g.group_low == top1 & bot2


def test_c6_all_tied_scores_bin_deterministically():
    ids = [f"T{i:02d}" for i in range(25)]
    a = decile_bins({s: 0.0 for s in ids})
    b = decile_bins({s: 0.0 for s in reversed(ids)})
    assert a == b
    assert [a[s] for s in ids] == [k for k, size in zip(range(1, 11), [2] * 5 + [3] * 5) for _ in range(size)]


# ---- 7. pipeline determinism and formats -----------------------------------


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    data = tmp_path_factory.mktemp("data")
    write_synthetic(data, n_sites=400, seed=0, with_covariates=True)
    outs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        cfg = RunConfig(
            samples=str(data / "samples.csv"), sites=str(data / "sites.csv"),
            precipitation=str(data / "precipitation.csv"), flow=str(data / "flow.csv"),
            site_covariate_map=str(data / "site_covariate_map.csv"), output_dir=str(out), seed=0,
        )
        run_pipeline(cfg)
        outs.append(out)
    return outs


@pytest.mark.parametrize("name", ["model.json", "scores.csv", "associations.csv", "bins.geojson"])
def test_c7_byte_identical(two_runs, name):
    a, b = two_runs
    assert (a / name).read_bytes() == (b / name).read_bytes()


def test_c7_geojson_schema(two_runs):
    text = (two_runs[0] / "bins.geojson").read_text()
    validate_geojson(text)
    assert len(json.loads(text)["features"]) == 400


def test_c7_p_bin_of_1e_12():
    assert p_value_bin(1e-12) == 10


# ---- 8. FVE arithmetic -------------------------------------------------------


def test_c8_fve_four_one():
    K, fve = select_k_fve([4.0, 1.0], 0.95)
    assert K == 2 and fve.tolist() == [0.8, 1.0]


def test_c8_bc_shares():
    K, fve = select_k_fve([0.74, 0.21, 0.03, 0.02], 0.95)
    assert K == 2 and fve[1] == pytest.approx(0.95, abs=1e-12)


def test_c8_k_cap_on_five_sites():
    series, _ = simulate_kl(standard_params((1.0, 0.5, 0.3)), 5, 1.0, seed=8)
    model = fit_fpca(series, FpcaConfig(fve_threshold=1.0))
    assert model.K <= 3
    assert fit_fpca(series, FpcaConfig(k_override=4)).K <= 3
