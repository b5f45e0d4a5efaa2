"""Group statistics: Welch tests, metric correlations, level pooling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cordscan.cohort import CohortTable, METRICS, select_ms_rows
from cordscan.errors import (DegenerateSample, UnbalancedDesignUnderdetermined,
                             ZeroVariance)
from cordscan.special import studentized_range_sf, t_sf_two_sided


@dataclass
class WelchResult:
    t: float
    df: float
    p: float
    mean_a: float
    mean_b: float
    std_a: float
    std_b: float
    n_a: int
    n_b: int


def welch(a, b) -> WelchResult:
    """Welch's unequal-variance t-test, two-sided.

    Zero variance in both samples is resolved by convention: p = 1 for
    equal means, p = 0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateSample(f"need >= 2 values per sample, got {a.size}, {b.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DegenerateSample("non-finite sample value")
    na, nb = a.size, b.size
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    sa, sb = np.sqrt(va), np.sqrt(vb)

    if va == 0.0 and vb == 0.0:
        if ma == mb:
            return WelchResult(0.0, float(na + nb - 2), 1.0, ma, mb, sa, sb, na, nb)
        t = np.inf if ma > mb else -np.inf
        return WelchResult(t, float(na + nb - 2), 0.0, ma, mb, sa, sb, na, nb)

    se2 = va / na + vb / nb
    t = (ma - mb) / np.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = t_sf_two_sided(float(t), float(df))
    return WelchResult(float(t), float(df), p, ma, mb, sa, sb, na, nb)


def cohort_welch(table: CohortTable, thresholds=(0.05, 0.10)
                 ) -> dict[str, dict[str, WelchResult]]:
    """Per metric: healthy levels (V) against NAWM and against MS(thr)
    for each threshold. Layout mirrors the group-comparison table the
    CLI writes."""
    v = table.v_rows()
    groups = {"nawm": table.nawm_rows()}
    for thr in thresholds:
        groups[f"ms_{thr:g}"] = select_ms_rows(table, thr)
    out: dict[str, dict[str, WelchResult]] = {}
    for metric in METRICS:
        ref = table.metric_values(v, metric)
        out[metric] = {}
        for name, rows in groups.items():
            vals = table.metric_values(rows, metric)
            out[metric][name] = welch(ref, vals)
    return out


def correlation_matrix(table: CohortTable, rows=None) -> np.ndarray:
    """Pearson correlation of the 6 metrics over the selected rows."""
    rows = list(rows) if rows is not None else list(table.rows)
    if len(rows) < 3:
        raise DegenerateSample(f"need >= 3 rows, got {len(rows)}")
    X = np.stack([table.metric_values(rows, m) for m in METRICS])
    if np.any(X.var(axis=1) == 0.0):
        flat = [m for m, v in zip(METRICS, X.var(axis=1)) if v == 0.0]
        raise ZeroVariance(f"constant metrics over selected rows: {flat}")
    C = np.corrcoef(X)
    C = np.clip((C + C.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return C


@dataclass
class LevelComparison:
    """Pairwise level contrasts for one metric from the additive
    subject + level model."""
    metric: str
    levels: list[int]
    emm: dict[int, float]
    # (l1, l2) with l1 < l2 -> Tukey-adjusted p-value
    p_adjusted: dict[tuple[int, int], float]
    residual_df: float
    alpha: float = 0.05

    def significant(self, l1: int, l2: int) -> bool:
        pair = (min(l1, l2), max(l1, l2))
        return self.p_adjusted[pair] < self.alpha


def level_pooling(observations, metric: str = "", alpha: float = 0.05
                  ) -> LevelComparison:
    """Estimated marginal means per level and Tukey-adjusted pairwise
    contrasts, from the additive two-way fixed-effects fit
    value = mu + subject + level + residual.

    observations: iterable of (subject, level, value). Requires every
    level observed for >= 2 subjects and every subject contributing
    >= 2 levels.
    """
    obs = [(str(s), int(l), float(v)) for s, l, v in observations]
    if not obs:
        raise UnbalancedDesignUnderdetermined("no observations")
    subjects = sorted({s for s, _, _ in obs})
    levels = sorted({l for _, l, _ in obs})
    if len(levels) < 2:
        raise UnbalancedDesignUnderdetermined("need >= 2 levels")
    per_level = {l: {s for s, ll, _ in obs if ll == l} for l in levels}
    bad = [l for l, ss in per_level.items() if len(ss) < 2]
    if bad:
        raise UnbalancedDesignUnderdetermined(f"levels {bad} observed for < 2 subjects")
    per_subject = {s: {l for ss, l, _ in obs if ss == s} for s in subjects}
    bad = [s for s, ls in per_subject.items() if len(ls) < 2]
    if bad:
        raise UnbalancedDesignUnderdetermined(f"subjects {bad} contribute < 2 levels")

    n = len(obs)
    s_index = {s: i for i, s in enumerate(subjects)}
    l_index = {l: i for i, l in enumerate(levels)}
    n_s, n_l = len(subjects), len(levels)
    # intercept + (n_s - 1) subject dummies + (n_l - 1) level dummies
    p = 1 + (n_s - 1) + (n_l - 1)
    X = np.zeros((n, p))
    y = np.empty(n)
    X[:, 0] = 1.0
    for i, (s, l, v) in enumerate(obs):
        si, li = s_index[s], l_index[l]
        if si > 0:
            X[i, si] = 1.0
        if li > 0:
            X[i, n_s - 1 + li] = 1.0
        y[i] = v

    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    dof = n - rank
    if dof < 1:
        raise UnbalancedDesignUnderdetermined("no residual degrees of freedom")
    resid = y - X @ beta
    scale = max(float(np.max(np.abs(y))), 1.0)
    if np.max(np.abs(resid)) < 1e-10 * scale:  # exactly consistent system
        resid = np.zeros_like(resid)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.pinv(X.T @ X)

    # EMM(l) = mu + level effect + average subject effect
    subj_avg = float(np.sum(beta[1:n_s])) / n_s
    level_coef = np.concatenate([[0.0], beta[n_s:]])
    emm = {l: float(beta[0] + subj_avg + level_coef[l_index[l]]) for l in levels}

    pairs = [(levels[i], levels[j]) for i in range(n_l) for j in range(i + 1, n_l)]
    diffs = np.empty(len(pairs))
    ses = np.empty(len(pairs))
    for idx, (l1, l2) in enumerate(pairs):
        c = np.zeros(p)
        if l_index[l1] > 0:
            c[n_s - 1 + l_index[l1]] = 1.0
        if l_index[l2] > 0:
            c[n_s - 1 + l_index[l2]] -= 1.0
        diffs[idx] = emm[l1] - emm[l2]
        ses[idx] = np.sqrt(max(float(c @ cov @ c), 0.0))

    p_adj: dict[tuple[int, int], float] = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        qs = np.where(ses > 0, np.sqrt(2.0) * np.abs(diffs) / ses, np.inf)
    finite = np.isfinite(qs) & (qs > 0)
    sf_vals = np.ones_like(qs)
    if finite.any():
        sf_vals[finite] = studentized_range_sf(qs[finite], k=n_l, df=dof)
    for idx, (l1, l2) in enumerate(pairs):
        if ses[idx] == 0.0:
            sf_vals[idx] = 1.0 if abs(diffs[idx]) < 1e-10 * scale else 0.0
        p_adj[(l1, l2)] = float(sf_vals[idx])

    return LevelComparison(metric=metric, levels=levels, emm=emm,
                           p_adjusted=p_adj, residual_df=float(dof), alpha=alpha)


def pooling_analysis(table: CohortTable, metrics=METRICS, group: str = "healthy",
                     alpha: float = 0.05) -> dict[str, LevelComparison]:
    rows = [r for r in table.rows if r.group == group]
    out = {}
    for m in metrics:
        out[m] = level_pooling(((r.subject, r.level, r.values[m]) for r in rows),
                               metric=m, alpha=alpha)
    return out


@dataclass
class PoolingReport:
    # metric -> maximal contiguous [lo, hi] runs with no significant pair
    intervals: dict[str, list[tuple[int, int]]]
    # runs clean for every metric simultaneously
    intersection: list[tuple[int, int]] = field(default_factory=list)


def _clean_runs(levels: list[int], significant) -> list[tuple[int, int]]:
    """Maximal runs of consecutive levels with no significant internal pair."""
    runs = []
    n = len(levels)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and levels[j + 1] == levels[j] + 1:
            nxt = j + 1
            if any(significant(levels[a], levels[nxt]) for a in range(i, nxt)):
                break
            j = nxt
        runs.append((levels[i], levels[j]))
        i += 1
    # keep maximal runs only
    out = []
    for lo, hi in runs:
        if not any(lo2 <= lo and hi <= hi2 and (lo2, hi2) != (lo, hi)
                   for lo2, hi2 in runs):
            out.append((lo, hi))
    return sorted(set(out))


def pooling_report(comparisons: dict[str, LevelComparison]) -> PoolingReport:
    """Per metric, the maximal contiguous level intervals whose internal
    pairs are all non-significant, plus the intersection across metrics."""
    if not comparisons:
        return PoolingReport(intervals={})
    intervals = {}
    level_sets = [tuple(c.levels) for c in comparisons.values()]
    for metric, comp in comparisons.items():
        intervals[metric] = _clean_runs(comp.levels, comp.significant)
    if len(set(level_sets)) == 1:
        levels = list(level_sets[0])
        any_sig = lambda l1, l2: any(c.significant(l1, l2)
                                     for c in comparisons.values())
        intersection = _clean_runs(levels, any_sig)
    else:
        intersection = []
    return PoolingReport(intervals=intervals, intersection=intersection)
