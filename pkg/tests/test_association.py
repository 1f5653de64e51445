import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from coliform_fpca.association import (
    P_BIN_FLOOR,
    ExtremaGroups,
    decile_bins,
    extrema_groups,
    linreg_r2,
    max_vs_fpc1,
    p_value_bin,
    percentiles,
    site_correlation,
    site_covariate_correlation,
    spearman,
)
from coliform_fpca.errors import ConstantPredictor, InsufficientData, InsufficientOverlap, ZeroVariance
from coliform_fpca.preprocess import WeeklySeries


def midranks(v):
    """Average 1-based positions of each value among the sorted values."""
    ordered = sorted(v)
    out = []
    for a in v:
        positions = [i + 1 for i, b in enumerate(ordered) if b == a]
        out.append(sum(positions) / len(positions))
    return out


def pearson(a, b):
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))
    return num / den


def oracle_rho(x, y):
    return pearson(midranks(x), midranks(y))


def test_spearman_monotone_pairs():
    assert spearman([1, 2, 3], [10, 20, 30])[0] == 1.0
    assert spearman([1, 2, 3], [30, 20, 10])[0] == -1.0
    assert spearman([1, 2, 3], [10, 20, 30])[1] == 0.0


def test_spearman_ties_match_oracle():
    x, y = (1, 2, 2, 3), (1, 3, 2, 4)
    assert spearman(x, y)[0] == pytest.approx(oracle_rho(x, y), abs=1e-12)


def test_spearman_t_pvalue_formula():
    x = [1, 2, 3, 4, 5, 6, 7]
    y = [2, 1, 4, 3, 7, 5, 6]
    rho, p = spearman(x, y)
    from scipy import stats

    t = rho * math.sqrt(5 / (1 - rho * rho))
    assert p == pytest.approx(2 * stats.t.sf(abs(t), 5), rel=1e-12)


def test_spearman_errors():
    with pytest.raises(InsufficientData):
        spearman([1, 2], [1, 2])
    with pytest.raises(ZeroVariance):
        spearman([1, 1, 1], [1, 2, 3])


def test_spearman_drops_missing_pairs():
    rho, _ = spearman([1, 2, float("nan"), 4, 5], [2, 1, 9, 4, 5])
    assert rho == pytest.approx(oracle_rho([1, 2, 4, 5], [2, 1, 4, 5]))


def test_linreg_exact_line():
    r = linreg_r2([1, 2, 3, 4], [5, 8, 11, 14])
    assert r.r_squared == 1.0 and r.slope == pytest.approx(3.0) and r.p_value == 0.0


def test_linreg_constant_y():
    r = linreg_r2([1, 2, 3, 4], [2, 2, 2, 2])
    assert r.r_squared == 0.0 and r.p_value == 1.0
    with pytest.raises(ConstantPredictor):
        linreg_r2([1, 1, 1], [1, 2, 3])


def test_linreg_normal_equations(rng):
    x, y = rng.normal(size=10), rng.normal(size=10)
    X = np.column_stack([np.ones(10), x])
    coef = np.linalg.solve(X.T @ X, X.T @ y)
    resid = y - X @ coef
    r2 = 1 - resid @ resid / np.sum((y - y.mean()) ** 2)
    from scipy import stats

    se = math.sqrt(resid @ resid / 8 * np.linalg.inv(X.T @ X)[1, 1])
    p = 2 * stats.t.sf(abs(coef[1] / se), 8)
    r = linreg_r2(x, y)
    assert r.intercept == pytest.approx(coef[0], abs=1e-10)
    assert r.slope == pytest.approx(coef[1], abs=1e-10)
    assert r.r_squared == pytest.approx(r2, abs=1e-10)
    assert r.p_value == pytest.approx(p, abs=1e-10)


def test_percentiles():
    assert percentiles({"a": 1.0, "b": 5.0, "c": 3.0}) == {"a": 0.0, "b": 100.0, "c": 50.0}
    assert percentiles({"a": 2.0}) == {"a": 50.0}
    assert percentiles({"a": 1.0, "b": 1.0, "c": 3.0})["a"] == 25.0


def test_max_vs_fpc1_exact():
    fpc1 = {f"S{i:02d}": float(i) for i in range(21)}
    pct = percentiles(fpc1)
    series = {s: WeeklySeries(s, (1, 52), {5: pct[s] / 50.0, 6: pct[s] / 50.0 - 1.0}) for s in fpc1}
    out = max_vs_fpc1(series, fpc1)
    assert out.regression.r_squared == pytest.approx(1.0)
    assert out.result.significant_positive
    groups = {r.group for r in out.table}
    assert groups == {"top", "bottom"} and all(r.week_of_max == 5 for r in out.table)


def test_twenty_scores_ten_bins_of_two(rng):
    scores = rng.permutation(20).astype(float)
    labels = decile_bins(scores)
    assert sorted(labels) == [b for b in range(1, 11) for _ in range(2)]
    for a, b in zip(scores, labels):
        assert b == int(a) // 2 + 1


def test_847_sites():
    r = np.random.default_rng(847)
    scores = {f"S{i:04d}": float(v) for i, v in enumerate(r.normal(size=847))}
    bins = decile_bins(scores)
    sizes = [sum(1 for b in bins.values() if b == k) for k in range(1, 11)]
    assert sizes == [84, 84, 84, 85, 85, 85, 85, 85, 85, 85]


def test_all_tied_scores_follow_site_id():
    ids = [f"S{i:02d}" for i in range(30)]
    shuffled = list(np.random.default_rng(0).permutation(ids))
    bins = decile_bins({s: 1.0 for s in shuffled})
    assert [bins[s] for s in ids] == [k for k in range(1, 11) for _ in range(3)]


def test_extrema_disjoint():
    ids = [f"S{i:03d}" for i in range(100)]
    fpc1 = {s: float(i) for i, s in enumerate(ids)}
    fpc2 = {s: float(-i) for i, s in enumerate(ids)}
    g = extrema_groups(fpc1, fpc2)
    assert g.group_high == frozenset() and len(g.group_low) == 10


def test_extrema_overlap_of_seven():
    ids = [f"S{i:03d}" for i in range(100)]
    fpc1 = {s: float(i) for i, s in enumerate(ids)}
    top1 = set(ids[90:])
    # seven of FPC1's top ten also sit in FPC2's top ten, two in its bottom ten
    high, low, rest = ids[90:97], ids[97:99], ids[:90]
    order2 = low + rest[:50] + ["S099"] + rest[50:] + high
    fpc2 = {s: float(i) for i, s in enumerate(order2)}
    oracle_top2 = set(sorted(fpc2, key=fpc2.get)[-10:])
    oracle_bot2 = set(sorted(fpc2, key=fpc2.get)[:10])
    g = extrema_groups(fpc1, fpc2)
    assert g.group_high == frozenset(top1 & oracle_top2) and len(g.group_high) == 7
    assert g.group_low == frozenset(top1 & oracle_bot2) and len(g.group_low) == 2


@pytest.mark.parametrize("p,b", [(0.06, None), (0.05, None), (0.049, 1), (1e-12, 10), (1e-10, 10), (0.0, 10)])
def test_p_value_bins(p, b):
    assert p_value_bin(p) == b


def test_p_value_bins_log_spaced():
    edges = np.logspace(np.log10(0.05), np.log10(P_BIN_FLOOR), 11)
    for k in range(10):
        mid = math.sqrt(edges[k] * edges[k + 1])
        assert p_value_bin(mid) == k + 1


def test_site_correlation_identical_curve():
    curve = {w: math.sin(w / 5) for w in range(1, 30)}
    r = site_correlation("A", curve, curve)
    assert r.value == pytest.approx(1.0) and r.significant_positive and r.p_bin == 10


def test_anticorrelated_is_not_significant_positive():
    curve = {w: float(w) for w in range(1, 30)}
    res = site_covariate_correlation({"A": curve}, {"A": {w: -v for w, v in curve.items()}})
    assert res[0].value == pytest.approx(-1.0) and not res[0].significant_positive and res[0].p_bin is None


def test_overlap_and_flat_covariate():
    with pytest.raises(InsufficientOverlap):
        site_correlation("A", {1: 1.0, 2: 2.0}, {1: 1.0, 2: 3.0, 5: 1.0})
    out = site_covariate_correlation({"A": {1: 1.0, 2: 2.0, 3: 3.0}}, {"A": {1: 4.0, 2: 4.0, 3: 4.0}})
    assert out[0].value == 0.0 and out[0].p_value == 1.0


finite = st.floats(-1e3, 1e3, allow_nan=False)
pairs = st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=4, max_size=25)


@settings(max_examples=150, deadline=None)
@given(pairs)
def test_spearman_properties(ps):
    x = [float(a) for a, _ in ps]
    y = [float(b) for _, b in ps]
    assume(len(set(x)) > 1 and len(set(y)) > 1)
    rho, p = spearman(x, y)
    assert rho == pytest.approx(oracle_rho(x, y), abs=1e-12)
    assert spearman(y, x)[0] == pytest.approx(rho, abs=1e-15)
    assert 0.0 <= p <= 1.0
    tx = [math.exp(v / 3) + 7 for v in x]
    ty = [v ** 3 for v in y]
    assert spearman(tx, ty)[0] == pytest.approx(rho, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=30))
def test_r2_equals_squared_pearson(ps):
    x = np.array([a for a, _ in ps])
    y = np.array([b for _, b in ps])
    assume(np.ptp(x) > 1e-6 and np.ptp(y) > 1e-6)
    r = np.corrcoef(x, y)[0, 1]
    assert linreg_r2(x, y).r_squared == pytest.approx(r * r, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.95, 0.95), st.integers(5, 200))
def test_p_decreases_with_n(rho, n):
    from coliform_fpca.association import _t_pvalue

    assume(abs(rho) > 1e-6)
    assert _t_pvalue(rho, n + 1) <= _t_pvalue(rho, n)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-20, 20), min_size=10, max_size=80))
def test_bins_monotone(vals):
    labels = decile_bins([float(v) for v in vals])
    for a, la in zip(vals, labels):
        for b, lb in zip(vals, labels):
            if a < b:
                assert la <= lb
    counts = [labels.count(k) for k in range(1, 11)]
    assert max(counts) - min(counts) <= 1 and counts == sorted(counts)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(20, 120))
def test_extrema_invariant_to_monotone_transforms(seed, n):
    r = np.random.default_rng(seed)
    ids = [f"S{i:03d}" for i in range(n)]
    f1 = dict(zip(ids, r.normal(size=n)))
    f2 = dict(zip(ids, r.normal(size=n)))
    base = extrema_groups(f1, f2)
    g = extrema_groups({s: math.exp(v) for s, v in f1.items()}, {s: 3 * v - 1 for s, v in f2.items()})
    assert g == base and isinstance(g, ExtremaGroups)
