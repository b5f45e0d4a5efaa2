"""Lesion detection score: LDA over metric combinations, ROC AUC
mean/std across repeated stratified train/test splits and a grid of
lesion-volume thresholds."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from cordscan.cohort import CohortTable, METRICS, select_ms_rows
from cordscan.errors import TooFewRows, ZeroVarianceColumn
from cordscan.lda import fit_lda, roc_auc, standardize

log = logging.getLogger("cordscan.classify")

# the eight bundled combinations of 2, 3 and 4 metrics
DEFAULT_COMBOS: tuple[tuple[str, ...], ...] = (
    ("fww", "rd"),
    ("fww", "fa"),
    ("fww", "stick_ad"),
    ("fa", "md"),
    ("fa", "md", "rd"),
    ("fww", "md", "stick_ad"),
    ("fww", "md", "stick_ad", "rd"),
    ("fww", "md", "fa", "rd"),
)

DEFAULT_THRESHOLDS: tuple[float, ...] = tuple(round(0.02 * i, 6) for i in range(1, 11))


@dataclass
class FeatureMatrix:
    """Observations for one (combo, threshold) cell.

    X columns follow combo order; y is 1 for patient levels above the
    lesion threshold, 0 for healthy-volunteer levels. scaled records
    whether X was standardized up front (the default step order) or is
    left raw for per-split scaling (--no-leak).
    """
    X: np.ndarray
    y: np.ndarray
    thr: float
    combo: tuple[str, ...]
    scaled: bool = True


@dataclass
class RocSummary:
    thr: float
    combo: tuple[str, ...]
    auc_mean: float
    auc_std: float
    n_splits: int
    n_pos: int
    n_neg: int
    seed: int
    note: str = ""


def subseed(seed: int, thr: float, combo: tuple[str, ...], k: int) -> int:
    """Stable 64-bit stream key for one split: results do not depend on
    execution order across (combo, thr, split) cells."""
    tag = f"{int(seed)}|{thr:.6f}|{','.join(combo)}|{int(k)}"
    digest = hashlib.sha256(tag.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def build_features(table: CohortTable, combo, thr: float,
                   no_leak: bool = False) -> FeatureMatrix:
    """Negative class = healthy-volunteer rows (NAWM rows excluded),
    positive class = patient rows with lesion fraction > thr."""
    combo = tuple(combo)
    unknown = [m for m in combo if m not in METRICS]
    if unknown:
        raise ValueError(f"unknown metric ids {unknown}")
    neg = table.v_rows()
    pos = select_ms_rows(table, thr)
    if len(pos) < 2 or len(neg) < 2:
        raise TooFewRows(f"thr={thr:g}: {len(pos)} positive / {len(neg)} negative rows")
    rows = neg + pos
    X = np.column_stack([table.metric_values(rows, m) for m in combo])
    y = np.concatenate([np.zeros(len(neg), dtype=int), np.ones(len(pos), dtype=int)])
    if not no_leak:
        X, _, _ = standardize(X)
    return FeatureMatrix(X=X, y=y, thr=thr, combo=combo, scaled=not no_leak)


def _split_counts(n: int, train_frac: float) -> int:
    n_train = int(round(train_frac * n))
    return min(max(n_train, 1), n - 1)


def repeated_split_auc(F: FeatureMatrix, n_splits: int = 1000,
                       train_frac: float = 0.67, seed: int = 0,
                       ridge: float = 1e-8, threads: int = 1) -> RocSummary:
    """Mean/std of ROC AUC over stratified random splits.

    Each split draws its own counter-based stream keyed on
    (seed, thr, combo, split index) and results are reduced in split
    order, so the summary is identical for any execution order or
    thread count.
    """
    n_pos = int(F.y.sum())
    n_neg = int(F.y.size - n_pos)
    if n_pos < 2 or n_neg < 2:
        raise TooFewRows(f"{n_pos} positive / {n_neg} negative rows")
    n_train = _split_counts(n_pos, train_frac) + _split_counts(n_neg, train_frac)
    if F.X.shape[1] > n_train - 2:
        raise TooFewRows(f"{F.X.shape[1]} features for {n_train} training rows")

    pos_idx = np.flatnonzero(F.y == 1)
    neg_idx = np.flatnonzero(F.y == 0)
    n_train_pos = _split_counts(n_pos, train_frac)
    n_train_neg = _split_counts(n_neg, train_frac)

    def one_split(k: int) -> float:
        rng = np.random.Generator(np.random.Philox(
            key=np.uint64(subseed(seed, F.thr, F.combo, k))))
        pos_perm = rng.permutation(pos_idx)
        neg_perm = rng.permutation(neg_idx)
        train = np.concatenate([pos_perm[:n_train_pos], neg_perm[:n_train_neg]])
        test = np.concatenate([pos_perm[n_train_pos:], neg_perm[n_train_neg:]])
        X_train, X_test = F.X[train], F.X[test]
        if not F.scaled:
            X_train, mean, std = standardize(X_train)
            X_test = (X_test - mean) / std
        model = fit_lda(X_train, F.y[train], ridge=ridge)
        return roc_auc(model.decision_scores(X_test), F.y[test])

    aucs = np.empty(n_splits)
    if threads <= 1:
        for k in range(n_splits):
            aucs[k] = one_split(k)
    else:
        import concurrent.futures
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            for k, auc in enumerate(pool.map(one_split, range(n_splits))):
                aucs[k] = auc

    return RocSummary(thr=F.thr, combo=F.combo,
                      auc_mean=float(aucs.mean()), auc_std=float(aucs.std()),
                      n_splits=n_splits, n_pos=n_pos, n_neg=n_neg, seed=seed)


def run_combinations(table: CohortTable, combos=DEFAULT_COMBOS,
                     thr_grid=DEFAULT_THRESHOLDS, seed: int = 0,
                     n_splits: int = 1000, train_frac: float = 0.67,
                     ridge: float = 1e-8, no_leak: bool = False,
                     include_singletons: bool = True) -> list[RocSummary]:
    """Every (combo, threshold) cell through repeated_split_auc; single
    metrics are appended for the per-metric overlay. Cells without
    enough rows are recorded with NaN scores and the run continues."""
    combo_list = [tuple(c) for c in combos]
    if include_singletons:
        for m in METRICS:
            if (m,) not in combo_list:
                combo_list.append((m,))
    results = []
    for combo in combo_list:
        for thr in thr_grid:
            thr = float(thr)
            try:
                F = build_features(table, combo, thr, no_leak=no_leak)
                results.append(repeated_split_auc(
                    F, n_splits=n_splits, train_frac=train_frac,
                    seed=seed, ridge=ridge))
            except (TooFewRows, ZeroVarianceColumn) as exc:
                log.warning("combo %s thr %g skipped: %s", combo, thr, exc)
                results.append(RocSummary(
                    thr=thr, combo=combo, auc_mean=float("nan"),
                    auc_std=float("nan"), n_splits=0, n_pos=0, n_neg=0,
                    seed=seed, note=str(exc)))
    return results
