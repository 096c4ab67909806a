"""Classification metrics: AUROC, accuracy, ROC curve."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg), ties counted as 1/2."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _check(scores, labels)
    if s.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean((s >= threshold) == y))


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """ROC points ``(fpr, tpr, threshold)`` from (0, 0) to (1, 1).

    Thresholds are the distinct scores in decreasing order, preceded by
    ``+inf``; a sample is positive when ``score >= threshold``.
    """
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs at least one positive and one negative label")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    points = [(0.0, 0.0, float("inf"))]
    points += [(fp[i] / n_neg, tp[i] / n_pos, float(s[i])) for i in last]
    return [(float(f), float(t), th) for f, t, th in points]


def trapezoid_area(points) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_band(curves, grid=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertical averaging of several ROC curves on a common FPR grid.

    Returns ``(grid, mean_tpr, std_tpr)``; std uses the population convention.
    """
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid)
    tprs = []
    for pts in curves:
        fpr = np.array([p[0] for p in pts])
        tpr = np.array([p[1] for p in pts])
        tprs.append(np.interp(grid, fpr, tpr, left=0.0, right=1.0))
    tprs = np.array(tprs)
    return grid, tprs.mean(axis=0), tprs.std(axis=0)


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation (n divisor)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=0))
