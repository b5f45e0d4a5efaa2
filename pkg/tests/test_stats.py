"""Welch test, metric correlations, level pooling."""

import numpy as np
import pytest

from cordscan.cohort import CohortRow, CohortTable, METRICS
from cordscan.errors import (DegenerateSample, UnbalancedDesignUnderdetermined,
                             ZeroVariance)
from cordscan.stats import (LevelComparison, cohort_welch, correlation_matrix,
                            level_pooling, pooling_analysis, pooling_report,
                            welch)


# ---------------------------------------------------------------- welch

def test_welch_identical_samples():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    r = welch(a, a.copy())
    assert r.t == 0.0
    assert r.p == 1.0


def test_welch_frozen_oracle_values():
    # high-precision reference computed with mpmath (40 digits)
    r = welch([1, 2, 3, 4, 5], [2, 3, 4, 5, 6, 7])
    np.testing.assert_allclose(r.t, -1.4411533842457842, rtol=1e-12)
    np.testing.assert_allclose(r.df, 8.98936170212766, rtol=1e-12)
    np.testing.assert_allclose(r.p, 0.18345224495316034, rtol=1e-9)


def test_welch_antisymmetry():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=rng.integers(2, 30))
        b = rng.normal(1.0, 2.0, size=rng.integers(2, 30))
        r1 = welch(a, b)
        r2 = welch(b, a)
        np.testing.assert_allclose(r1.t, -r2.t, rtol=1e-13)
        np.testing.assert_allclose(r1.p, r2.p, rtol=1e-13)
        assert 0.0 <= r1.p <= 1.0 and r1.df > 0


def test_welch_zero_variance_conventions():
    assert welch([1.0, 1.0], [1.0, 1.0, 1.0]).p == 1.0
    assert welch([1.0, 1.0], [2.0, 2.0]).p == 0.0


def test_welch_small_samples_raise():
    with pytest.raises(DegenerateSample):
        welch([1.0], [1.0, 2.0])
    with pytest.raises(DegenerateSample):
        welch([1.0, np.nan, 2.0], [1.0, 2.0])


def test_welch_null_p_uniform_ks():
    """Under the null the p-values are uniform (KS stat < 0.02, 1e4 sims)."""
    rng = np.random.default_rng(42)
    n_sim = 10_000
    ps = np.empty(n_sim)
    for i in range(n_sim):
        ps[i] = welch(rng.normal(size=15), rng.normal(size=20)).p
    ps.sort()
    grid = np.arange(1, n_sim + 1) / n_sim
    ks = np.max(np.maximum(np.abs(grid - ps), np.abs(ps - (grid - 1.0 / n_sim))))
    assert ks < 0.02


# ------------------------------------------------------- correlations

def _table_from_matrix(X, group="healthy"):
    table = CohortTable()
    for i, row in enumerate(X):
        table.append(CohortRow(subject=f"s{i}", group=group, level=2,
                               values=dict(zip(METRICS, map(float, row)))))
    return table


def test_correlation_affine_dependence():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 6))
    X[:, 1] = 2.0 * X[:, 0] + 5.0
    C = correlation_matrix(_table_from_matrix(X))
    np.testing.assert_allclose(C[0, 1], 1.0, atol=1e-12)


def test_correlation_independent_metrics_near_zero():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(10_000, 6))
    C = correlation_matrix(_table_from_matrix(X))
    off = C[~np.eye(6, dtype=bool)]
    assert np.abs(off).max() < 0.05


def test_correlation_md_linear_identity():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 6))
    idx = {m: i for i, m in enumerate(METRICS)}
    X[:, idx["md"]] = (X[:, idx["ad"]] + 2.0 * X[:, idx["rd"]]) / 3.0
    C = correlation_matrix(_table_from_matrix(X))
    sub = C[np.ix_([idx["md"], idx["ad"], idx["rd"]],
                   [idx["md"], idx["ad"], idx["rd"]])]
    # md correlates exactly 1 with its own linear combination
    combo = (X[:, idx["ad"]] + 2 * X[:, idx["rd"]]) / 3.0
    r = np.corrcoef(X[:, idx["md"]], combo)[0, 1]
    np.testing.assert_allclose(r, 1.0, atol=1e-12)
    assert np.all(np.abs(sub) <= 1.0)


def test_correlation_matrix_symmetric_psd():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
    C = correlation_matrix(_table_from_matrix(X))
    np.testing.assert_array_equal(C, C.T)
    np.testing.assert_allclose(np.diag(C), 1.0, rtol=0)
    assert np.linalg.eigvalsh(C).min() > -1e-10


def test_correlation_errors():
    rng = np.random.default_rng(5)
    with pytest.raises(DegenerateSample):
        correlation_matrix(_table_from_matrix(rng.normal(size=(2, 6))))
    X = rng.normal(size=(10, 6))
    X[:, 3] = 7.0
    with pytest.raises(ZeroVariance):
        correlation_matrix(_table_from_matrix(X))


# ------------------------------------------------------ level pooling

def _cohort_obs(rng, n_subj=20, levels=range(1, 8), level_shift=None,
                subj_sd=0.5, noise_sd=0.3):
    out = []
    shifts = level_shift or {}
    for i in range(n_subj):
        subj_eff = rng.normal(0, subj_sd)
        for l in levels:
            out.append((f"s{i:02d}", l,
                        10.0 + subj_eff + shifts.get(l, 0.0)
                        + rng.normal(0, noise_sd)))
    return out


def test_pooling_null_rarely_flags():
    """No level effect injected: family-wise flags stay near the 5% level
    (Monte Carlo calibration)."""
    rng = np.random.default_rng(6)
    n_cohorts = 1000
    clean = 0
    for _ in range(n_cohorts):
        comp = level_pooling(_cohort_obs(rng, n_subj=10), metric="m")
        if not any(p < 0.05 for p in comp.p_adjusted.values()):
            clean += 1
    assert clean >= 0.94 * n_cohorts


def test_pooling_detects_large_offset():
    rng = np.random.default_rng(7)
    comp = level_pooling(_cohort_obs(rng, level_shift={5: 3.0}), metric="m")
    for l in (1, 2, 3, 4, 6, 7):
        assert comp.significant(5, l)
    assert not comp.significant(2, 3)


def test_pooling_zero_residual_equal_means():
    obs = [("a", 1, 5.0), ("a", 2, 5.0), ("b", 1, 7.0), ("b", 2, 7.0)]
    comp = level_pooling(obs, metric="m")
    assert comp.p_adjusted[(1, 2)] == 1.0


def test_pooling_emm_invariant_to_subject_offset():
    rng = np.random.default_rng(8)
    obs = _cohort_obs(rng, n_subj=12)
    comp1 = level_pooling(obs, metric="m")
    shifted = [(s, l, v + (37.0 if s == "s03" else 0.0)) for s, l, v in obs]
    comp2 = level_pooling(shifted, metric="m")
    for (l1, l2) in comp1.p_adjusted:
        d1 = comp1.emm[l1] - comp1.emm[l2]
        d2 = comp2.emm[l1] - comp2.emm[l2]
        np.testing.assert_allclose(d1, d2, atol=1e-10)


def test_pooling_underdetermined_designs():
    with pytest.raises(UnbalancedDesignUnderdetermined):
        level_pooling([("a", 1, 1.0), ("a", 2, 2.0)])  # one subject per level
    with pytest.raises(UnbalancedDesignUnderdetermined):
        level_pooling([("a", 1, 1.0), ("b", 1, 2.0)])  # single level
    obs = [("a", 1, 1.0), ("a", 2, 2.0), ("b", 1, 1.5), ("b", 2, 2.5),
           ("c", 3, 1.0)]  # subject c contributes one level
    with pytest.raises(UnbalancedDesignUnderdetermined):
        level_pooling(obs)


# ------------------------------------------------------ pooling report

def _fake_comparison(metric, sig_pairs, levels=range(1, 8)):
    levels = list(levels)
    p = {}
    for i, l1 in enumerate(levels):
        for l2 in levels[i + 1:]:
            p[(l1, l2)] = 0.01 if (l1, l2) in sig_pairs else 0.5
    return LevelComparison(metric=metric, levels=levels,
                           emm={l: 0.0 for l in levels}, p_adjusted=p,
                           residual_df=10.0)


def test_report_no_significant_pairs():
    comps = {m: _fake_comparison(m, set()) for m in METRICS}
    rep = pooling_report(comps)
    for m in METRICS:
        assert rep.intervals[m] == [(1, 7)]
    assert rep.intersection == [(1, 7)]


def test_report_single_break():
    comps = {m: _fake_comparison(m, set()) for m in METRICS}
    comps["fa"] = _fake_comparison("fa", {(3, 5)})
    rep = pooling_report(comps)
    assert rep.intervals["fa"] == [(1, 4), (4, 7)] or \
        rep.intervals["fa"] == [(1, 4), (6, 7), (4, 7)]
    # intersection loses any run containing both 3 and 5
    assert all(not (lo <= 3 and 5 <= hi) for lo, hi in rep.intersection)
    assert rep.intervals["md"] == [(1, 7)]


def test_report_engineered_c2_c4():
    sig = set()
    levels = list(range(1, 8))
    homog = {2, 3, 4}
    for i, l1 in enumerate(levels):
        for l2 in levels[i + 1:]:
            if not (l1 in homog and l2 in homog):
                sig.add((l1, l2))
    comps = {m: _fake_comparison(m, sig) for m in METRICS}
    rep = pooling_report(comps)
    multi = [iv for iv in rep.intersection if iv[1] > iv[0]]
    assert multi == [(2, 4)]


def test_cohort_welch_layout():
    rng = np.random.default_rng(9)
    table = CohortTable()
    for i in range(12):
        for lv in (2, 3, 4):
            table.append(CohortRow(
                subject=f"h{i}", group="healthy", level=lv,
                values={m: float(rng.normal(1.0, 0.1)) for m in METRICS}))
    for i in range(10):
        for lv in (2, 3, 4):
            frac = float(rng.choice([0.0, 0.08, 0.2]))
            table.append(CohortRow(
                subject=f"p{i}", group="patient", level=lv,
                values={m: float(rng.normal(1.2, 0.1)) for m in METRICS},
                lesion_fraction=frac))
    res = cohort_welch(table, thresholds=(0.05, 0.10))
    assert set(res) == set(METRICS)
    for metric in METRICS:
        assert set(res[metric]) == {"nawm", "ms_0.05", "ms_0.1"}
        for r in res[metric].values():
            assert 0.0 <= r.p <= 1.0
