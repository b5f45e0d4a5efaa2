"""Two-class linear discriminant analysis and ROC AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cordscan.errors import (SingleClassTest, SingleClassTraining,
                             SingularCovariance, ZeroVarianceColumn)


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center each column and scale to unit (population) variance.

    Returns (X_scaled, means, stds). Raises ZeroVarianceColumn when a
    column is constant.
    """
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if np.any(std == 0.0):
        cols = np.flatnonzero(std == 0.0).tolist()
        raise ZeroVarianceColumn(f"constant feature column(s) {cols}")
    return (X - mean) / std, mean, std


@dataclass
class LdaModel:
    w: np.ndarray
    b: float
    mean_neg: np.ndarray
    mean_pos: np.ndarray
    pooled_cov: np.ndarray

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.w + self.b


def fit_lda(X: np.ndarray, y: np.ndarray, ridge: float = 0.0) -> LdaModel:
    """w ~ pooled_cov^-1 (mu_pos - mu_neg); bias from class priors.

    pooled covariance is the class-size-weighted sample covariance plus
    ridge * I. With ridge = 0 a singular covariance raises
    SingularCovariance.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y).astype(int)
    if X.shape[0] != y.size:
        raise ValueError("X and y row counts differ")
    neg, pos = X[y == 0], X[y == 1]
    if len(neg) == 0 or len(pos) == 0:
        raise SingleClassTraining("training labels contain a single class")

    k = X.shape[1]
    mu0, mu1 = neg.mean(axis=0), pos.mean(axis=0)
    scatter = np.zeros((k, k))
    for cls in (neg, pos):
        if len(cls) >= 2:
            d = cls - cls.mean(axis=0)
            scatter += d.T @ d
    denom = max(len(neg) + len(pos) - 2, 1)
    cov = scatter / denom + ridge * np.eye(k)

    try:
        w = np.linalg.solve(cov, mu1 - mu0)
    except np.linalg.LinAlgError:
        if ridge == 0.0:
            raise SingularCovariance("pooled covariance is singular; "
                                     "set ridge > 0") from None
        raise
    if not np.all(np.isfinite(w)) or (ridge == 0.0
                                      and np.linalg.cond(cov) > 1e14):
        raise SingularCovariance("pooled covariance is singular; set ridge > 0")

    prior_ratio = np.log(len(pos) / len(neg))
    b = float(-w @ (mu0 + mu1) / 2.0 + prior_ratio)
    return LdaModel(w=w, b=b, mean_neg=mu0, mean_pos=mu1, pooled_cov=cov)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(equal)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassTest("ROC AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # average ranks over tie groups (1-based)
    new_group = np.r_[True, sorted_scores[1:] != sorted_scores[:-1]]
    group_id = np.cumsum(new_group) - 1
    counts = np.bincount(group_id)
    starts = np.cumsum(counts) - counts
    avg_rank = starts + (counts + 1) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = avg_rank[group_id]
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
