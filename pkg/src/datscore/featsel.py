"""Statistic-driven feature selection with sub-bagging frequency aggregation.

Per training subset, every feature receives a test score: Fisher's exact
test (2 x 3 genotype contingency) for categorical genetic features,
Welch's t-test for continuous w-score volumes.  Ranking uses the effect
size (Cramer's V, |Cohen's d|), which unlike the p-value does not reward
sheer sample size.  The top k per subset are pooled across subsets and
the final set keeps the k most frequently selected features, breaking
boundary ties by seeded random choice.  A regression-based comparator
(LASSO) shares the same per-subset protocol.
"""

from __future__ import annotations

import heapq
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ValidationError
from .lasso import lasso_select
from .plink import MISSING_CODE
from .special import log_factorials, student_t_two_sided

GENETIC_PREFIX = "snp:"
MRI_PREFIX = "roi:"

# Probability-ordering tie tolerance for exact-test enumeration; avoids
# floating-point inclusion flicker at analytically tied tables.
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SubBagPlan:
    """F balanced training subsets drawn without replacement per subset."""

    f_subsets: int
    sampling_ratio: float
    seed: int
    class_a_ids: tuple[str, ...]
    class_b_ids: tuple[str, ...]
    subsets: tuple[tuple[str, ...], ...]
    oob: tuple[tuple[str, ...], ...]

    @property
    def subset_size(self) -> int:
        return len(self.subsets[0]) if self.subsets else 0

    @property
    def training_ids(self) -> tuple[str, ...]:
        return self.class_a_ids + self.class_b_ids

    def to_json(self) -> str:
        return json.dumps(
            {
                "f_subsets": self.f_subsets,
                "sampling_ratio": self.sampling_ratio,
                "seed": self.seed,
                "class_a_ids": list(self.class_a_ids),
                "class_b_ids": list(self.class_b_ids),
                "subsets": [list(s) for s in self.subsets],
                "oob": [list(s) for s in self.oob],
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SubBagPlan":
        data = json.loads(text)
        return cls(
            f_subsets=data["f_subsets"],
            sampling_ratio=data["sampling_ratio"],
            seed=data["seed"],
            class_a_ids=tuple(data["class_a_ids"]),
            class_b_ids=tuple(data["class_b_ids"]),
            subsets=tuple(tuple(s) for s in data["subsets"]),
            oob=tuple(tuple(s) for s in data["oob"]),
        )


def make_subbag_plan(
    class_a_ids: Sequence[str],
    class_b_ids: Sequence[str],
    f: int = 10,
    ratio: float = 0.8,
    seed: int = 0,
) -> SubBagPlan:
    """Draw F balanced subsets, each with round(ratio * min-class) per class.

    Sampling is without replacement within a subset and independent across
    subsets; each subset's out-of-bag complement is recorded.  With ratio
    1.0 and equal classes the complement is empty, which is flagged with a
    warning since out-of-bag scoring then has nothing to work with.
    """
    class_a = list(class_a_ids)
    class_b = list(class_b_ids)
    if not class_a or not class_b:
        raise ValidationError("both classes must be non-empty")
    if not 0.0 < ratio <= 1.0:
        raise ValidationError(f"sampling ratio must lie in (0, 1], got {ratio}")
    if f < 1:
        raise ValidationError(f"need at least one subset, got f={f}")
    n_per_class = round(ratio * min(len(class_a), len(class_b)))
    if n_per_class < 1:
        raise ValidationError(
            f"ratio {ratio} x min-class {min(len(class_a), len(class_b))} "
            "selects no subjects"
        )
    rng = np.random.default_rng(seed)
    all_ids = set(class_a) | set(class_b)
    subsets = []
    oob = []
    for _ in range(f):
        chosen_a = rng.choice(len(class_a), size=n_per_class, replace=False)
        chosen_b = rng.choice(len(class_b), size=n_per_class, replace=False)
        subset = tuple(
            [class_a[i] for i in sorted(chosen_a)]
            + [class_b[i] for i in sorted(chosen_b)]
        )
        subsets.append(subset)
        oob.append(tuple(sorted(all_ids - set(subset))))
    if any(len(o) == 0 for o in oob):
        warnings.warn("at least one subset has an empty out-of-bag complement")
    return SubBagPlan(
        f_subsets=f,
        sampling_ratio=ratio,
        seed=seed,
        class_a_ids=tuple(class_a),
        class_b_ids=tuple(class_b),
        subsets=tuple(subsets),
        oob=tuple(oob),
    )


@dataclass
class FeatureScore:
    """Per-feature test outcome used for effect-size ranking."""

    feature_id: str
    statistic_value: float
    p_value: float
    effect_size: float
    metadata: dict = field(default_factory=dict)


def welch_t_test(x, y, feature_id: str = "") -> FeatureScore:
    """Welch's unequal-variance t-test with |Cohen's d| as effect size.

    The two-sided p-value uses the Welch-Satterthwaite degrees of freedom;
    Cohen's d uses the pooled-sd denominator.  When both samples are
    constant: equal means give (t=0, p=1, d=0), differing means give an
    infinite effect sentinel that ranks first.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = x.size, y.size
    if nx < 2 or ny < 2:
        raise ValidationError("welch_t_test needs at least two values per sample")
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    if vx == 0.0 and vy == 0.0:
        if mx == my:
            return FeatureScore(feature_id, 0.0, 1.0, 0.0)
        sign = 1.0 if mx > my else -1.0
        return FeatureScore(
            feature_id, sign * math.inf, 0.0, math.inf, {"degenerate": True}
        )
    se2 = vx / nx + vy / ny
    t = (mx - my) / math.sqrt(se2)
    df = se2**2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1))
    p = student_t_two_sided(t, df)
    pooled_sd = math.sqrt(((nx - 1) * vx + (ny - 1) * vy) / (nx + ny - 2))
    d = abs(mx - my) / pooled_sd
    return FeatureScore(feature_id, t, p, d, {"df": df})


def _cramers_v(table: np.ndarray) -> tuple[float, float]:
    """(chi-squared, Cramer's V) of a 2 x k table, skipping empty margins."""
    n = table.sum()
    row = table.sum(axis=1, keepdims=True)
    col = table.sum(axis=0, keepdims=True)
    expected = row * col / n
    mask = expected > 0
    chi2 = float((((table - expected) ** 2)[mask] / expected[mask]).sum())
    k = int((col > 0).sum())
    r = int((row > 0).sum())
    denom = n * (min(r, k) - 1)
    v = math.sqrt(chi2 / denom) if denom > 0 else 0.0
    return chi2, v


def fisher_exact_test(table, feature_id: str = "") -> FeatureScore:
    """Exact two-sided test on a 2 x 3 genotype contingency table.

    Enumerates every table with the observed margins and sums the
    probabilities (multivariate hypergeometric) no larger than the
    observed table's, with a 1e-12 relative tie tolerance.  Effect size is
    Cramer's V.  Genotype columns that are entirely zero are collapsed
    away first, which is recorded in the score metadata.
    """
    table = np.asarray(table, dtype=np.int64)
    if table.shape != (2, 3):
        raise ValidationError(f"expected a 2x3 table, got shape {table.shape}")
    if (table < 0).any():
        raise ValidationError("contingency counts must be non-negative")
    if (table.sum(axis=1) == 0).any():
        raise ValidationError("both class rows must have positive totals")

    chi2, v = _cramers_v(table)
    nonzero_cols = table.sum(axis=0) > 0
    collapsed = not nonzero_cols.all()
    work = table[:, nonzero_cols]
    p = _fisher_exact_p(work)
    return FeatureScore(
        feature_id,
        chi2,
        p,
        v,
        {"collapsed": collapsed, "n": int(table.sum())},
    )


def _fisher_exact_p(table: np.ndarray) -> float:
    """Exact p for a 2 x k (k <= 3) table with strictly positive margins."""
    k = table.shape[1]
    if k <= 1:
        return 1.0
    r1 = int(table[0].sum())
    n = int(table.sum())
    cols = [int(c) for c in table.sum(axis=0)]
    lgf = log_factorials(n)
    const = (
        lgf[r1]
        + lgf[n - r1]
        + sum(lgf[c] for c in cols)
        - lgf[n]
    )
    if k == 2:
        c0, c1 = cols
        x1 = np.arange(max(0, r1 - c0), min(c1, r1) + 1)
        x0 = r1 - x1
        logp = const - (
            lgf[x0] + lgf[x1] + lgf[c0 - x0] + lgf[c1 - x1]
        )
        obs = int(table[0, 1])
        log_obs = logp[x1 == obs][0]
    else:
        c0, c1, c2 = cols
        x1 = np.arange(c1 + 1)
        x2 = np.arange(c2 + 1)
        x0 = r1 - x1[:, None] - x2[None, :]
        feasible = (x0 >= 0) & (x0 <= c0)
        x0c = np.clip(x0, 0, c0)
        logp = const - (
            lgf[x0c]
            + lgf[x1][:, None]
            + lgf[x2][None, :]
            + lgf[c0 - x0c]
            + (lgf[c1 - x1])[:, None]
            + (lgf[c2 - x2])[None, :]
        )
        logp = np.where(feasible, logp, -np.inf)
        log_obs = logp[int(table[0, 1]), int(table[0, 2])]
        logp = logp[feasible]
    prob = np.exp(logp)
    include = logp <= log_obs + math.log1p(_TIE_RTOL)
    # normalizing by the full enumeration absorbs accumulated float error
    return float(prob[include].sum() / prob.sum())


def genotype_contingency(values: np.ndarray, is_class_a: np.ndarray) -> np.ndarray:
    """2 x 3 counts of genotype codes {0, 1, 2}; missing (-1) is excluded."""
    values = np.asarray(values)
    table = np.zeros((2, 3), dtype=np.int64)
    for row, mask in enumerate((is_class_a, ~is_class_a)):
        sub = values[mask]
        sub = sub[sub != MISSING_CODE]
        table[row] = np.bincount(sub, minlength=3)[:3]
    return table


def select_per_subset(scores: Iterable[FeatureScore], k: int) -> list[str]:
    """Top-k feature ids by effect size, descending.

    Ties break toward the smaller p-value, then the lexicographically
    smaller feature id.  Uses a streaming bounded heap, so arbitrarily
    long score iterators never require a full sort.
    """
    best = heapq.nsmallest(
        k, scores, key=lambda s: (-s.effect_size, s.p_value, s.feature_id)
    )
    if len(best) < k:
        raise ValidationError(f"asked for top {k} of only {len(best)} scores")
    return [s.feature_id for s in best]


@dataclass
class FeatureSelection:
    feature_id: str
    selection_frequency: float
    modality: str


@dataclass
class FeatureSet:
    """Final ranked features for one modality (or the combined union)."""

    modality: str
    features: list[FeatureSelection]
    k: int

    def __post_init__(self):
        if self.modality not in ("genetic", "mri", "combined"):
            raise ValidationError(f"unknown modality {self.modality!r}")
        if len(self.features) != self.k:
            raise ValidationError(
                f"feature set holds {len(self.features)} features but k={self.k}"
            )

    @property
    def feature_ids(self) -> list[str]:
        return [f.feature_id for f in self.features]

    def to_json(self) -> str:
        return json.dumps(
            {
                "modality": self.modality,
                "k": self.k,
                "features": [
                    {
                        "feature_id": f.feature_id,
                        "selection_frequency": f.selection_frequency,
                        "modality": f.modality,
                    }
                    for f in self.features
                ],
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "FeatureSet":
        data = json.loads(text)
        return cls(
            modality=data["modality"],
            features=[
                FeatureSelection(
                    f["feature_id"], f["selection_frequency"], f["modality"]
                )
                for f in data["features"]
            ],
            k=data["k"],
        )


def aggregate_frequency(
    per_subset_selections: Sequence[Sequence[str]],
    k: int,
    rng: np.random.Generator,
    modality: str = "genetic",
) -> FeatureSet:
    """Rank features by how often the subsets selected them; keep k.

    Features selected strictly more often than the boundary count are kept
    outright; the remaining slots are filled by a seeded uniform draw from
    the boundary ties, which carry no information that could order them.
    """
    f_total = len(per_subset_selections)
    if f_total < 1:
        raise ValidationError("need at least one subset selection")
    counts = Counter()
    for selection in per_subset_selections:
        counts.update(set(selection))
    if len(counts) < k:
        raise ValidationError(
            f"only {len(counts)} distinct features were ever selected; need {k}"
        )
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    boundary_count = ordered[k - 1][1]
    certain = [fid for fid, c in ordered if c > boundary_count]
    boundary = [fid for fid, c in ordered if c == boundary_count]
    n_slots = k - len(certain)
    chosen = sorted(rng.choice(len(boundary), size=n_slots, replace=False))
    final = certain + [boundary[i] for i in chosen]
    features = [
        FeatureSelection(fid, counts[fid] / f_total, modality) for fid in final
    ]
    return FeatureSet(modality=modality, features=features, k=k)


def combine_modalities(genetic: FeatureSet, mri: FeatureSet) -> FeatureSet:
    """Unique union of the two finalized sets, provenance retained."""
    seen = set()
    combined = []
    for source in (genetic, mri):
        for feature in source.features:
            if feature.feature_id in seen:
                warnings.warn(
                    f"feature {feature.feature_id} appears in both modalities; "
                    "keeping the first occurrence"
                )
                continue
            seen.add(feature.feature_id)
            combined.append(
                FeatureSelection(
                    feature.feature_id, feature.selection_frequency, feature.modality
                )
            )
    return FeatureSet(modality="combined", features=combined, k=len(combined))


def impute_missing_with_mode(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replace -1 codes with the per-column mode over non-missing values.

    Ties between equally common codes resolve to the smaller code; an
    all-missing column imputes to 0.  Returns (imputed, modes) as floats.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    modes = np.zeros(x.shape[1])
    for j in range(x.shape[1]):
        col = x[:, j]
        present = col[col != MISSING_CODE]
        if present.size:
            values, counts = np.unique(present, return_counts=True)
            modes[j] = values[np.argmax(counts)]
        out[col == MISSING_CODE, j] = modes[j]
    return out, modes


def standardize_columns(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns; constant columns become zeros."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    out = np.where(sd > 0, (x - mean) / np.where(sd > 0, sd, 1.0), 0.0)
    return out


def score_genetic_subset(
    matrix: np.ndarray,
    feature_ids: Sequence[str],
    is_class_a: np.ndarray,
) -> list[FeatureScore]:
    """Fisher-score every genetic feature on one subset's rows."""
    return [
        fisher_exact_test(
            genotype_contingency(matrix[:, j], is_class_a), feature_ids[j]
        )
        for j in range(matrix.shape[1])
    ]


def score_mri_subset(
    matrix: np.ndarray,
    feature_ids: Sequence[str],
    is_class_a: np.ndarray,
) -> list[FeatureScore]:
    """Welch-score every continuous feature on one subset's rows."""
    a = matrix[is_class_a]
    b = matrix[~is_class_a]
    return [
        welch_t_test(a[:, j], b[:, j], feature_ids[j])
        for j in range(matrix.shape[1])
    ]


def lasso_subset_selection(
    matrix: np.ndarray,
    feature_ids: Sequence[str],
    labels: np.ndarray,
    k: int,
    genetic: bool,
) -> list[str]:
    """Per-subset LASSO selection sharing the statistical arm's protocol.

    Genetic codes are mode-imputed before standardization so the design
    fulfils the standardized-columns precondition.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if genetic:
        x, _ = impute_missing_with_mode(x)
    design = standardize_columns(x)
    indices, _ = lasso_select(design, labels, k)
    return [feature_ids[j] for j in indices]


class SubBaggedFrequencySelector(BaseEstimator):
    """Sub-bagged feature selector with an sklearn-style surface.

    Parameters
    ----------
    method : {"fisher", "welch", "lasso"}
        Per-subset scoring statistic.  "fisher" expects categorical
        minor-allele counts, "welch" continuous features; "lasso" accepts
        either (set ``genetic=True`` for categorical inputs).
    k : int
        Number of features kept per subset and in the final set.
    """

    def __init__(
        self,
        method: str = "fisher",
        k: int = 17,
        f_subsets: int = 10,
        ratio: float = 0.8,
        seed: int = 0,
        genetic: Optional[bool] = None,
        modality: str = "genetic",
    ):
        self.method = method
        self.k = k
        self.f_subsets = f_subsets
        self.ratio = ratio
        self.seed = seed
        self.genetic = genetic
        self.modality = modality

    def fit(self, X, y, feature_ids=None, plan: Optional[SubBagPlan] = None):
        """Select features from X (subjects x features) and labels y (+/-1)."""
        X = np.asarray(X)
        y = np.asarray(y)
        if X.shape[0] != y.size:
            raise ValidationError("X and y disagree on the number of subjects")
        if feature_ids is None:
            feature_ids = [f"f{j}" for j in range(X.shape[1])]
        if plan is None:
            ids = [str(i) for i in range(X.shape[0])]
            a_ids = [ids[i] for i in np.nonzero(y < 0)[0]]
            b_ids = [ids[i] for i in np.nonzero(y > 0)[0]]
            plan = make_subbag_plan(a_ids, b_ids, self.f_subsets, self.ratio, self.seed)
            row_of = {sid: i for i, sid in enumerate(ids)}
        else:
            row_of = {sid: i for i, sid in enumerate(plan.training_ids)}
        genetic = self.method == "fisher" if self.genetic is None else self.genetic

        per_subset = []
        class_a = set(plan.class_a_ids)
        for subset in plan.subsets:
            rows = np.array([row_of[sid] for sid in subset])
            in_a = np.array([sid in class_a for sid in subset])
            sub_x = X[rows]
            if self.method == "fisher":
                scores = score_genetic_subset(sub_x, feature_ids, in_a)
                per_subset.append(select_per_subset(scores, self.k))
            elif self.method == "welch":
                scores = score_mri_subset(sub_x, feature_ids, in_a)
                per_subset.append(select_per_subset(scores, self.k))
            elif self.method == "lasso":
                labels = np.where(in_a, -1.0, 1.0)
                per_subset.append(
                    lasso_subset_selection(sub_x, feature_ids, labels, self.k, genetic)
                )
            else:
                raise ValidationError(f"unknown selection method {self.method!r}")

        rng = np.random.default_rng(self.seed + 1)
        self.plan_ = plan
        self.per_subset_selections_ = per_subset
        self.feature_set_ = aggregate_frequency(per_subset, self.k, rng, self.modality)
        index = {fid: j for j, fid in enumerate(feature_ids)}
        self.support_ = np.zeros(X.shape[1], dtype=bool)
        for fid in self.feature_set_.feature_ids:
            self.support_[index[fid]] = True
        return self

    def transform(self, X):
        if not hasattr(self, "support_"):
            raise ValidationError("selector is not fitted")
        return np.asarray(X)[:, self.support_]

    def get_support(self):
        if not hasattr(self, "support_"):
            raise ValidationError("selector is not fitted")
        return self.support_
