"""Classification metrics upstream of the fairness machinery: AUROC and
balanced-threshold binarization.

Thresholds are always fit on validation scores and then frozen for test-set
use. Binarization is a strict inequality: predicted positive iff
score > threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ScoredLabelSet:
    """Per-subject continuous scores with binary ground-truth labels."""

    task: str
    entries: list[tuple[str, float, int]]  # (subject_id, score, label)

    def __post_init__(self) -> None:
        for sid, score, label in self.entries:
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"{sid}: score {score} outside [0, 1]")
            if label not in (0, 1):
                raise ValueError(f"{sid}: label must be 0 or 1, got {label!r}")

    def scores(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.float64)

    def labels(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=np.int64)


@dataclass(frozen=True)
class BalancedThreshold:
    """Score cut minimizing |sensitivity - specificity| on validation."""

    task: str
    threshold: float
    achieved_sensitivity: float
    achieved_specificity: float


def auroc(s: ScoredLabelSet) -> float:
    """Area under the ROC curve via the rank-sum statistic.

    Equals the probability that a random positive outscores a random
    negative, with ties counted as one half. Requires both classes.
    """
    scores = s.scores()
    labels = s.labels()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"task {s.task}: AUROC needs both classes present")
    ranks = _midranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their block."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def fit_balanced_threshold(validation: ScoredLabelSet) -> BalancedThreshold:
    """Pick the threshold minimizing |TPR - TNR| over a finite candidate set.

    Candidates are the midpoints between adjacent distinct scores plus 0
    and 1 (the objective is piecewise constant, so this set contains an
    optimum). Ties break toward the larger TPR, then the smaller threshold.
    """
    scores = validation.scores()
    labels = validation.labels()
    if labels.sum() == 0 or labels.sum() == labels.size:
        raise ValueError(f"task {validation.task}: need both classes to fit a threshold")

    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    candidates = np.unique(np.concatenate(([0.0], mids, [1.0])))

    pos = scores[labels == 1]
    neg = scores[labels == 0]
    best: tuple[float, float, float, float] | None = None  # (gap, -tpr, thr, tnr)
    for thr in candidates:
        tpr = float(np.mean(pos > thr))
        tnr = float(np.mean(neg <= thr))
        key = (abs(tpr - tnr), -tpr, thr)
        if best is None or key < (best[0], best[1], best[2]):
            best = (abs(tpr - tnr), -tpr, thr, tnr)
    assert best is not None
    return BalancedThreshold(
        task=validation.task,
        threshold=float(best[2]),
        achieved_sensitivity=float(-best[1]),
        achieved_specificity=float(best[3]),
    )


def binarize(
    s: ScoredLabelSet, t: BalancedThreshold
) -> list[tuple[str, int, int]]:
    """Apply a frozen threshold: predicted 1 iff score > threshold.

    Returns (subject_id, predicted, label) triples.
    """
    if s.task != t.task:
        raise ValueError(f"task mismatch: scores for {s.task!r}, threshold for {t.task!r}")
    return [(sid, int(score > t.threshold), label) for sid, score, label in s.entries]
