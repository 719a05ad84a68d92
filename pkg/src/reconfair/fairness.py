"""Group-fairness metrics over binarized predictions (EODD, EOP), Dice-based
segmentation fairness (SER, max Dice gap), bias-change reporting, and
subject-level bootstrap significance.

EODD here is the worst-case gap: the max over both label classes and all
group pairs of |P(pred=1 | Y=y, group i) - P(pred=1 | Y=y, group j)|. The
summed pairwise variant (TPR gap + FPR gap per pair) is exposed separately
as :func:`eodd_sum`; it is the quantity tied to the conditional-covariance
identity checked in the mitigation module.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import SubgroupPartition
from .util import rng_for

SER_ERROR_FLOOR = 1e-6  # denominator floor: avoids division by zero at Dice=1
RELATIVE_CHANGE_FLOOR = 1e-6

Binarized = list[tuple[str, int, int]]  # (subject_id, predicted, label)


@dataclass
class FairnessResult:
    """One fairness metric value with the group pair realizing it."""

    metric: str  # eodd | eop | eodd_sum | ser | delta_dice
    attribute: str
    value: float
    argmax_groups: tuple[str, str, int | None]  # (group_i, group_j, y or None)
    group_stats: dict[str, dict] = field(default_factory=dict)


@dataclass
class BiasChange:
    """Relative bias change in percent, or absolute change when the original
    bias is too small for a meaningful ratio."""

    absolute: float
    percent: float | None
    undefined_relative: bool


@dataclass
class BootstrapComparison:
    """Subject-resampled statistic with two-sided p-value and percentile CI."""

    statistic: float
    iterations: int
    p_value: float
    ci_low: float
    ci_high: float
    seed: int


def group_rates(binarized: Binarized, partition: SubgroupPartition) -> dict[str, dict]:
    """Confusion-rate summary per group; samples outside the partition are
    ignored. Rates conditioned on an absent class are None."""
    stats: dict[str, dict] = {}
    lookup: dict[str, str] = {}
    for g, ids in partition.groups.items():
        for sid in ids:
            lookup[sid] = g
        stats[g] = {"n_pos": 0, "n_neg": 0, "pred_pos_given_pos": 0,
                    "pred_pos_given_neg": 0}
    for sid, pred, label in binarized:
        g = lookup.get(sid)
        if g is None:
            continue
        if label == 1:
            stats[g]["n_pos"] += 1
            stats[g]["pred_pos_given_pos"] += pred
        else:
            stats[g]["n_neg"] += 1
            stats[g]["pred_pos_given_neg"] += pred
    for g, st in stats.items():
        st["tpr"] = st["pred_pos_given_pos"] / st["n_pos"] if st["n_pos"] else None
        st["fpr"] = st["pred_pos_given_neg"] / st["n_neg"] if st["n_neg"] else None
    return stats


def _eligible(stats: dict[str, dict], metric: str, need_both: bool) -> list[str]:
    eligible = []
    for g in sorted(stats):
        st = stats[g]
        ok = st["n_pos"] >= 1 and (st["n_neg"] >= 1 or not need_both)
        st["eligible"] = ok
        if ok:
            eligible.append(g)
        elif st["n_pos"] + st["n_neg"] > 0:
            warnings.warn(
                f"{metric}: dropping group {g!r} (needs samples of "
                f"{'both classes' if need_both else 'the positive class'})",
                stacklevel=3,
            )
    return eligible


def eodd(binarized: Binarized, partition: SubgroupPartition) -> FairnessResult:
    """Worst-case equalized-odds gap across label classes and group pairs."""
    return _rate_gap_metric(binarized, partition, "eodd", classes=(1, 0))


def eop(binarized: Binarized, partition: SubgroupPartition) -> FairnessResult:
    """Equality-of-opportunity gap: TPR differences only (positive class)."""
    return _rate_gap_metric(binarized, partition, "eop", classes=(1,))


def _rate_gap_metric(
    binarized: Binarized,
    partition: SubgroupPartition,
    metric: str,
    classes: tuple[int, ...],
) -> FairnessResult:
    stats = group_rates(binarized, partition)
    eligible = _eligible(stats, metric, need_both=(0 in classes))
    if len(eligible) < 2:
        raise ValueError(
            f"{metric} undefined for attribute {partition.attribute!r}: "
            f"{len(eligible)} eligible group(s)"
        )
    best = (-1.0, ("", "", None))
    for y in classes:
        key = "tpr" if y == 1 else "fpr"
        for i, gi in enumerate(eligible):
            for gj in eligible[i + 1:]:
                gap = abs(stats[gi][key] - stats[gj][key])
                if gap > best[0]:
                    best = (gap, (gi, gj, y))
    return FairnessResult(
        metric=metric,
        attribute=partition.attribute,
        value=best[0],
        argmax_groups=best[1],
        group_stats=stats,
    )


def eodd_sum(binarized: Binarized, partition: SubgroupPartition) -> FairnessResult:
    """Max over group pairs of (TPR gap + FPR gap), the summed pairwise form."""
    stats = group_rates(binarized, partition)
    eligible = _eligible(stats, "eodd_sum", need_both=True)
    if len(eligible) < 2:
        raise ValueError(
            f"eodd_sum undefined for attribute {partition.attribute!r}: "
            f"{len(eligible)} eligible group(s)"
        )
    best = (-1.0, ("", "", None))
    for i, gi in enumerate(eligible):
        for gj in eligible[i + 1:]:
            gap = abs(stats[gi]["tpr"] - stats[gj]["tpr"]) + abs(
                stats[gi]["fpr"] - stats[gj]["fpr"]
            )
            if gap > best[0]:
                best = (gap, (gi, gj, None))
    return FairnessResult(
        metric="eodd_sum",
        attribute=partition.attribute,
        value=best[0],
        argmax_groups=best[1],
        group_stats=stats,
    )


def ser(dice_by_group: dict[str, float], attribute: str = "") -> FairnessResult:
    """Skewed-error ratio on Dice: worst group error over best group error.

    The denominator is floored at 1e-6 so a perfect group (Dice = 1) cannot
    blow the ratio up to infinity. Always >= 1.
    """
    _check_group_count(dice_by_group)
    errors = {g: 1.0 - d for g, d in dice_by_group.items()}
    _check_dice_values(dice_by_group)
    worst = max(sorted(errors), key=lambda g: errors[g])
    best = min(sorted(errors), key=lambda g: errors[g])
    value = errors[worst] / max(errors[best], SER_ERROR_FLOOR)
    return FairnessResult(
        metric="ser",
        attribute=attribute,
        value=max(value, 1.0),
        argmax_groups=(worst, best, None),
        group_stats={g: {"dice": d, "error": errors[g]} for g, d in dice_by_group.items()},
    )


def delta_dice(dice_by_group: dict[str, float], attribute: str = "") -> FairnessResult:
    """Maximum pairwise absolute Dice gap across groups."""
    _check_group_count(dice_by_group)
    _check_dice_values(dice_by_group)
    names = sorted(dice_by_group)
    best = (-1.0, ("", "", None))
    for i, gi in enumerate(names):
        for gj in names[i + 1:]:
            gap = abs(dice_by_group[gi] - dice_by_group[gj])
            if gap > best[0]:
                best = (gap, (gi, gj, None))
    return FairnessResult(
        metric="delta_dice",
        attribute=attribute,
        value=best[0],
        argmax_groups=best[1],
        group_stats={g: {"dice": d} for g, d in dice_by_group.items()},
    )


def _check_group_count(dice_by_group: dict[str, float]) -> None:
    if len(dice_by_group) < 2:
        raise ValueError(f"need at least 2 groups, got {len(dice_by_group)}")


def _check_dice_values(dice_by_group: dict[str, float]) -> None:
    for g, d in dice_by_group.items():
        if not 0.0 <= d <= 1.0:
            raise ValueError(f"group {g!r}: Dice {d} outside [0, 1]")


def bias_change(bias_orig: float, bias_new: float) -> BiasChange:
    """Percent change in a bias value relative to the original.

    When the original bias is below 1e-6 the ratio is meaningless; the
    absolute change is returned with the undefined_relative flag set.
    """
    if bias_orig < 0 or bias_new < 0:
        raise ValueError("bias values must be non-negative")
    absolute = bias_new - bias_orig
    if bias_orig < RELATIVE_CHANGE_FLOOR:
        return BiasChange(absolute=absolute, percent=None, undefined_relative=True)
    return BiasChange(
        absolute=absolute,
        percent=100.0 * absolute / bias_orig,
        undefined_relative=False,
    )


def bootstrap_compare(
    unit_records: Sequence,
    statistic_fn: Callable[[Sequence], float],
    iterations: int = 1000,
    seed: int = 0,
) -> BootstrapComparison:
    """Resample subjects with replacement and summarize a statistic.

    The resampling unit is always the subject (never the slice), matching
    patient-level exchangeability. Two-sided p-value: twice the smaller tail
    fraction of replicates on either side of zero, clamped to
    [2/(iterations+1), 1]. The CI is the 95% percentile interval.
    Per-iteration seeds derive from the master seed, so results do not
    depend on execution order. Replicates where ``statistic_fn`` raises
    ValueError (degenerate resamples, e.g. one class only) are dropped;
    more than 20% of them is an error.
    """
    n = len(unit_records)
    if n < 10:
        raise ValueError(f"need at least 10 subjects for the bootstrap, got {n}")
    if iterations < 1:
        raise ValueError("iterations must be positive")
    observed = float(statistic_fn(unit_records))

    reps: list[float] = []
    degenerate = 0
    for i in range(iterations):
        idx = rng_for(seed, "bootstrap", str(i)).integers(0, n, size=n)
        sample = [unit_records[j] for j in idx]
        try:
            reps.append(float(statistic_fn(sample)))
        except ValueError:
            degenerate += 1
    if degenerate > 0.2 * iterations:
        raise ValueError(
            f"{degenerate}/{iterations} bootstrap resamples were degenerate "
            "(statistic undefined); groups or classes are too sparse"
        )
    arr = np.asarray(reps, dtype=np.float64)
    frac_le = float(np.mean(arr <= 0.0))
    frac_ge = float(np.mean(arr >= 0.0))
    p = 2.0 * min(frac_le, frac_ge)
    p = min(max(p, 2.0 / (iterations + 1)), 1.0)
    ci_low, ci_high = np.percentile(arr, [2.5, 97.5])
    return BootstrapComparison(
        statistic=observed,
        iterations=iterations,
        p_value=p,
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        seed=seed,
    )


def merge_small_groups(
    partition: SubgroupPartition, min_count: int, sink_label: str = "Other"
) -> SubgroupPartition:
    """Merge every group smaller than ``min_count`` into a sink group."""
    sink: set[str] = set(partition.groups.get(sink_label, set()))
    groups: dict[str, set[str]] = {}
    for g, ids in partition.groups.items():
        if g == sink_label:
            continue
        if len(ids) < min_count:
            sink |= ids
        else:
            groups[g] = set(ids)
    if sink or sink_label in partition.groups:
        groups[sink_label] = sink
    merged = SubgroupPartition(
        attribute=partition.attribute,
        groups=groups,
        threshold=partition.threshold,
        degenerate=(len(groups) < 2),
        excluded=set(partition.excluded),
    )
    merged.validate()
    return merged
