"""Classification metrics, AUC, stratum rollups, and the paired t-test.

AUC is computed as the Mann-Whitney rank statistic with ties counted 1/2,
which equals the limit of sweeping the decision threshold from 0 to 1
with trapezoidal integration.  Metrics on an empty class are reported as
undefined (None) rather than coerced to zero.

The paired one-sided test ships in two variants: the per-arm-variance
form t = (mean(a) - mean(b)) / sqrt(var(a)/n + var(b)/n), which is the
default, and the textbook difference-variance form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .cohort import DAT_PLUS, DAT_PLUS_STRATA, STRATA
from .ensemble import DatScoreTable
from .errors import ValidationError
from .special import student_t_sf

GROUP_ROLLUPS = {
    "NC": ("sNC", "uNC", "pNC"),
    "MCI": ("sMCI", "pMCI"),
    "DAT": ("eDAT", "sDAT"),
}
TRAJECTORY_ROLLUPS = {
    "DAT_minus": ("sNC", "uNC", "sMCI"),
    "DAT_plus": ("pNC", "pMCI", "eDAT", "sDAT"),
}


@dataclass
class MetricsReport:
    sensitivity: Optional[float]
    specificity: Optional[float]
    accuracy: Optional[float]
    balanced_accuracy: Optional[float]
    auc: Optional[float]
    per_stratum_accuracy: dict = field(default_factory=dict)
    rollups: dict = field(default_factory=dict)
    n: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "auc": self.auc,
            "per_stratum_accuracy": self.per_stratum_accuracy,
            "rollups": self.rollups,
            "n": self.n,
        }


@dataclass
class PairedTestResult:
    t_statistic: float
    df: int
    p_one_sided: float
    mean_diff: float
    n: int
    variant: str = "per_arm"


def trajectory_truth(table: DatScoreTable) -> dict[str, str]:
    """Derive DAT+/DAT- truth labels from each row's stratum."""
    truth = {}
    for row in table.rows:
        if row.stratum not in STRATA:
            raise ValidationError(
                f"subject {row.subject_id} has unknown stratum {row.stratum!r}"
            )
        truth[row.subject_id] = (
            "DAT_plus" if row.stratum in DAT_PLUS_STRATA else "DAT_minus"
        )
    return truth


def auc(scores, is_positive) -> Optional[float]:
    """Mann-Whitney AUC with ties counted one half; None if a class is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    is_positive = np.asarray(is_positive, dtype=bool)
    n_pos = int(is_positive.sum())
    n_neg = int((~is_positive).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[is_positive].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_metrics(
    table: DatScoreTable, truth: Optional[Mapping[str, str]] = None
) -> MetricsReport:
    """Sensitivity / specificity / accuracy / balanced accuracy plus rollups.

    ``truth`` maps subject_id to DAT_plus / DAT_minus; by default it is
    derived from each row's stratum.  Rollups aggregate accuracy over the
    conventional NC / MCI / DAT groups and the two trajectories.
    """
    if truth is None:
        truth = trajectory_truth(table)
    missing = [r.subject_id for r in table.rows if r.subject_id not in truth]
    if missing:
        raise ValidationError(
            f"truth labels missing for: {', '.join(missing[:5])}"
        )
    is_pos = np.array([truth[r.subject_id] == DAT_PLUS for r in table.rows])
    pred_pos = np.array([r.predicted == DAT_PLUS for r in table.rows])
    tp = int((is_pos & pred_pos).sum())
    tn = int((~is_pos & ~pred_pos).sum())
    fp = int((~is_pos & pred_pos).sum())
    fn = int((is_pos & ~pred_pos).sum())
    n_pos, n_neg = tp + fn, tn + fp
    sens = tp / n_pos if n_pos else None
    spec = tn / n_neg if n_neg else None
    acc = (tp + tn) / len(table.rows) if table.rows else None
    bal = (sens + spec) / 2.0 if sens is not None and spec is not None else None

    per_stratum = {}
    counts = {}
    for stratum in STRATA:
        rows = [r for r in table.rows if r.stratum == stratum]
        counts[stratum] = len(rows)
        if rows:
            correct = sum(
                1 for r in rows if (r.predicted == DAT_PLUS) == (truth[r.subject_id] == DAT_PLUS)
            )
            per_stratum[stratum] = correct / len(rows)
        else:
            per_stratum[stratum] = None

    rollups = {}
    for name, strata in {**GROUP_ROLLUPS, **TRAJECTORY_ROLLUPS}.items():
        members = [r for r in table.rows if r.stratum in strata]
        if members:
            correct = sum(
                1
                for r in members
                if (r.predicted == DAT_PLUS) == (truth[r.subject_id] == DAT_PLUS)
            )
            rollups[name] = correct / len(members)
        else:
            rollups[name] = None

    return MetricsReport(
        sensitivity=sens,
        specificity=spec,
        accuracy=acc,
        balanced_accuracy=bal,
        auc=auc(table.scores(), is_pos),
        per_stratum_accuracy=per_stratum,
        rollups=rollups,
        n={"positive": n_pos, "negative": n_neg, **counts},
    )


def paired_one_sided_t(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    variant: str = "per_arm",
) -> PairedTestResult:
    """One-sided paired comparison: is arm a's mean larger than arm b's?

    variant "per_arm" uses sqrt(var(a)/n + var(b)/n) in the denominator;
    variant "difference" uses the classic sd(a - b)/sqrt(n).  Identical
    arms give t = 0, p = 0.5; a zero denominator with a nonzero mean
    difference is undefined and raises.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("paired arms must be equal-length vectors")
    n = a.size
    if n < 2:
        raise ValidationError("paired test needs at least two pairs")
    mean_diff = float(a.mean() - b.mean())
    if variant == "per_arm":
        denom = math.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
    elif variant == "difference":
        denom = float((a - b).std(ddof=1)) / math.sqrt(n)
    else:
        raise ValidationError(f"unknown variant {variant!r}")
    if denom == 0.0:
        if mean_diff == 0.0:
            return PairedTestResult(0.0, n - 1, 0.5, 0.0, n, variant)
        raise ValidationError(
            "paired test undefined: zero variance with differing means"
        )
    t = mean_diff / denom
    return PairedTestResult(
        t_statistic=float(t),
        df=n - 1,
        p_one_sided=student_t_sf(float(t), n - 1),
        mean_diff=mean_diff,
        n=n,
        variant=variant,
    )
