"""Threshold-free ranking metrics with anomalies as the positive class."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class MetricError(ValueError):
    """Scores/labels unusable for evaluation (e.g. a single-class truth)."""


@dataclass
class EvalResult:
    auc_pr: float
    auc_roc: float
    n_pos: int
    n_neg: int
    pr_points: Optional[np.ndarray] = None   # (recall, precision) per threshold
    roc_points: Optional[np.ndarray] = None  # (fpr, tpr) per threshold


def _validate(scores, truth):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel().astype(np.int64)
    if scores.shape != truth.shape:
        raise MetricError("scores and truth must have the same length")
    if scores.size == 0:
        raise MetricError("cannot evaluate an empty score vector")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    n_pos = int((truth == 1).sum())
    n_neg = int((truth == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"need both classes in truth, got {n_pos} positives and {n_neg} negatives")
    return scores, truth, n_pos, n_neg


def _midranks(scores: np.ndarray) -> np.ndarray:
    # 1-based ranks; tied values share the average of their rank range
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    return avg[inverse]


def auc_roc(scores, truth) -> float:
    """Rank (Mann-Whitney) formulation of the ROC area; ties count one half."""
    scores, truth, n_pos, n_neg = _validate(scores, truth)
    ranks = _midranks(scores)
    rank_sum = ranks[truth == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _pr_curve(scores, truth, n_pos):
    # threshold at every distinct score, descending; ties collapse into one step
    order = np.argsort(-scores, kind="mergesort")
    sorted_truth = truth[order]
    sorted_scores = scores[order]
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    last = np.concatenate([boundary, [len(sorted_scores) - 1]])
    tp = np.cumsum(sorted_truth)[last].astype(np.float64)
    n_at = (last + 1).astype(np.float64)
    precision = tp / n_at
    recall = tp / n_pos
    return recall, precision


def auc_pr(scores, truth) -> float:
    """Area under the precision-recall step curve (average precision).

    Thresholds are the distinct score values, so a block of tied scores
    contributes a single step: with every score equal the result is exactly
    the positive rate.
    """
    scores, truth, n_pos, _ = _validate(scores, truth)
    recall, precision = _pr_curve(scores, truth, n_pos)
    return float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))


def evaluate(scores, truth, with_curves: bool = False) -> EvalResult:
    scores, truth, n_pos, n_neg = _validate(scores, truth)
    result = EvalResult(
        auc_pr=auc_pr(scores, truth),
        auc_roc=auc_roc(scores, truth),
        n_pos=n_pos,
        n_neg=n_neg,
    )
    if with_curves:
        recall, precision = _pr_curve(scores, truth, n_pos)
        result.pr_points = np.column_stack([recall, precision])
        order = np.argsort(-scores, kind="mergesort")
        st = truth[order]
        ss = scores[order]
        boundary = np.flatnonzero(np.diff(ss) != 0.0)
        last = np.concatenate([boundary, [len(ss) - 1]])
        tp = np.cumsum(st)[last]
        fp = (last + 1) - tp
        result.roc_points = np.column_stack([fp / n_neg, tp / n_pos])
    return result
