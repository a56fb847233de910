from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import linregress

from .errors import ArgumentError, UndefinedMetricError
from .features import PeakFeatures
from .grouping import PairwiseResults
from .schemas import (
    AlignmentResult,
    GroupDetail,
    GroupMetrics,
    LinearFit,
    PairwiseMetrics,
    TimingRow,
)

logger = logging.getLogger(__name__)


def _scores_and_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ArgumentError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise ArgumentError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def _rate(numerator: int, denominator: int) -> float | None:
    return numerator / denominator if denominator else None


def pairwise_confusion(scores, labels, threshold: float = 0.5) -> PairwiseMetrics:
    """Confusion counts with ``score >= threshold`` predicted positive."""
    scores, labels = _scores_and_labels(scores, labels)
    predicted = scores >= threshold
    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))
    tn = int(np.sum(~predicted & (labels == 0)))
    return PairwiseMetrics(
        threshold=threshold,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        tp_rate=_rate(tp, tp + fn),
        fp_rate=_rate(fp, fp + tn),
    )


def accuracy_at(scores, labels, threshold: float = 0.5) -> float:
    scores, labels = _scores_and_labels(scores, labels)
    if scores.size == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    return float(np.mean((scores >= threshold) == (labels == 1)))


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fp_rate: np.ndarray
    tp_rate: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fp_rate.tolist(), self.tp_rate.tolist()))


def roc_auc(scores, labels) -> RocCurve:
    """ROC over every distinct score; the first point (threshold +inf) is (0, 0)."""
    scores, labels = _scores_and_labels(scores, labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both positive and negative pairs")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tps = np.cumsum(sorted_labels == 1)
    fps = np.cumsum(sorted_labels == 0)
    last_of_value = np.flatnonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])
    thresholds = np.r_[np.inf, sorted_scores[last_of_value]]
    tpr = np.r_[0.0, tps[last_of_value] / n_pos]
    fpr = np.r_[0.0, fps[last_of_value] / n_neg]
    return RocCurve(thresholds, fpr, tpr, float(trapezoid(tpr, fpr)))


def pair_labels(
    groups: Sequence[int] | Sequence[PeakFeatures], results: PairwiseResults
) -> tuple[np.ndarray, np.ndarray]:
    """Scores and truth labels of every pair with at least one identified peak."""
    groups = np.array([getattr(g, "group", g) for g in groups], dtype=np.int64)
    ga, gb = groups[results.i], groups[results.j]
    keep = (ga >= 0) | (gb >= 0)
    labels = ((ga == gb) & (ga >= 0)).astype(np.int64)
    return results.probability[keep], labels[keep]


def group_tp_fdr(result: AlignmentResult, truth: Sequence[int]) -> GroupMetrics:
    """Group-level true-positive rate and false discovery rate.

    Each true group is matched to the aligned group holding most of its members
    (ties go to the earliest aligned RT). Its members there are true positives;
    every other peak aligned to that group, identified or not, is a false positive.
    """
    assignment = np.asarray(result.assignment, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if truth.size != assignment.size:
        raise ArgumentError(f"{truth.size} truth labels for {assignment.size} peaks")
    labeled_groups = sorted(int(g) for g in np.unique(truth) if g >= 0)
    if not labeled_groups:
        raise ArgumentError("truth holds no identified peaks")
    details: list[GroupDetail] = []
    total_tp = total_fp = 0
    for group in labeled_groups:
        members = truth == group
        counts = Counter(assignment[members].tolist())
        best = max(counts.values())
        aligned = min(
            (g for g, c in counts.items() if c == best),
            key=lambda g: (result.group_rt[g], g),
        )
        in_aligned = assignment == aligned
        tp = int(np.sum(in_aligned & members))
        fp = int(np.sum(in_aligned & ~members))
        total_tp += tp
        total_fp += fp
        details.append(
            GroupDetail(
                truth_group=group,
                members=int(members.sum()),
                aligned_group=int(aligned),
                aligned_rt=result.group_rt[aligned],
                tp=tp,
                fp=fp,
            )
        )
    n_labeled = int(np.sum(truth >= 0))
    found = total_tp + total_fp
    metrics = GroupMetrics(
        tp_rate=total_tp / n_labeled,
        fdr=total_fp / found if found else 0.0,
        tp=total_tp,
        fp=total_fp,
        n_labeled=n_labeled,
        groups=details,
    )
    logger.info("group TP rate %.4f, FDR %.4f", metrics.tp_rate, metrics.fdr)
    return metrics


def runtime_fit(rows: Sequence[TimingRow]) -> LinearFit:
    """Least-squares line of seconds against pair combinations."""
    if len(rows) < 3:
        raise ArgumentError(f"a runtime fit needs at least 3 sizes, got {len(rows)}")
    x = np.array([r.combinations for r in rows], dtype=np.float64)
    y = np.array([r.seconds for r in rows], dtype=np.float64)
    if np.ptp(x) == 0:
        raise UndefinedMetricError("every size produced the same number of combinations")
    fit = linregress(x, y)
    return LinearFit(
        slope=float(fit.slope), intercept=float(fit.intercept), r_squared=float(fit.rvalue**2)
    )
