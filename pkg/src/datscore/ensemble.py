"""Sub-bagged ensemble of multi-kernel classifiers and DAT-score tables.

F classifiers are trained, one per sub-bag subset, on the two anchor
strata (sNC as the negative class, sDAT as the positive class).  Training
subjects receive out-of-bag scores: the mean probability over exactly the
members whose subset excluded them.  Subjects from the unseen strata are
scored by every member.  A fixed threshold (default 0.5, ties counted as
positive) turns scores into DAT-/DAT+ labels.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .cohort import DAT_MINUS, DAT_PLUS
from .errors import ValidationError
from .featsel import FeatureSet, SubBagPlan, impute_missing_with_mode
from .kernels import build_kernels, default_specs
from .mkl import MklConfig, MklModel, predict_from_features, train

DEFAULT_THRESHOLD = 0.5


@dataclass
class FeatureMatrix:
    """Aligned subjects x selected-features block with kernel metadata."""

    subject_ids: tuple[str, ...]
    feature_ids: tuple[str, ...]
    values: np.ndarray
    blocks: dict[str, tuple[int, ...]]
    genetic_columns: tuple[int, ...]

    def __post_init__(self):
        self.subject_ids = tuple(self.subject_ids)
        self.feature_ids = tuple(self.feature_ids)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.subject_ids), len(self.feature_ids)):
            raise ValidationError("feature matrix shape mismatch")

    def rows_for(self, subject_ids: Sequence[str]) -> np.ndarray:
        index = {sid: i for i, sid in enumerate(self.subject_ids)}
        missing = [sid for sid in subject_ids if sid not in index]
        if missing:
            raise ValidationError(
                f"subjects absent from feature matrix: {', '.join(missing[:5])}"
            )
        return np.array([index[sid] for sid in subject_ids], dtype=int)


@dataclass
class EnsembleModel:
    members: list[MklModel]
    plan: SubBagPlan
    feature_set: FeatureSet
    modality: str

    def __post_init__(self):
        if len(self.members) != self.plan.f_subsets:
            raise ValidationError("one trained member per subset is required")

    def to_json(self) -> str:
        return json.dumps(
            {
                "modality": self.modality,
                "plan": json.loads(self.plan.to_json()),
                "feature_set": json.loads(self.feature_set.to_json()),
                "members": [m.to_dict() for m in self.members],
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EnsembleModel":
        data = json.loads(text)
        return cls(
            members=[MklModel.from_dict(m) for m in data["members"]],
            plan=SubBagPlan.from_json(json.dumps(data["plan"])),
            feature_set=FeatureSet.from_json(json.dumps(data["feature_set"])),
            modality=data["modality"],
        )


@dataclass
class DatScoreRow:
    subject_id: str
    stratum: str
    score: float
    n_contributing_members: int
    predicted: str


@dataclass
class DatScoreTable:
    """Per-subject DAT scores in [0, 1] with their thresholded labels."""

    modality: str
    threshold: float
    rows: list[DatScoreRow] = field(default_factory=list)
    unscorable: list[str] = field(default_factory=list)

    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.rows])

    def subject_ids(self) -> list[str]:
        return [r.subject_id for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["subject_id", "stratum", "modality", "score", "predicted"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.subject_id, r.stratum, self.modality, repr(float(r.score)), r.predicted]
                )

    @classmethod
    def from_csv(cls, path, threshold: float = DEFAULT_THRESHOLD) -> "DatScoreTable":
        rows = []
        modality = ""
        with open(path, newline="", encoding="utf-8") as fh:
            for record in csv.DictReader(fh):
                modality = record["modality"]
                rows.append(
                    DatScoreRow(
                        subject_id=record["subject_id"],
                        stratum=record["stratum"],
                        score=float(record["score"]),
                        n_contributing_members=-1,
                        predicted=record["predicted"],
                    )
                )
        return cls(modality=modality, threshold=threshold, rows=rows)


def _prepare_member_matrix(
    values: np.ndarray, genetic_columns: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Mode-impute the genetic columns; returns (matrix, stored modes)."""
    out = np.asarray(values, dtype=np.float64).copy()
    modes = np.zeros(len(genetic_columns))
    if genetic_columns:
        cols = list(genetic_columns)
        imputed, modes = impute_missing_with_mode(out[:, cols])
        out[:, cols] = imputed
    return out, modes


def _apply_modes(
    values: np.ndarray, genetic_columns: Sequence[int], modes: np.ndarray
) -> np.ndarray:
    out = np.asarray(values, dtype=np.float64).copy()
    for j, col in enumerate(genetic_columns):
        mask = out[:, col] == -1
        out[mask, col] = modes[j]
    return out


def train_ensemble(
    data: FeatureMatrix,
    feature_set: FeatureSet,
    plan: SubBagPlan,
    mkl_config: Optional[MklConfig] = None,
    modality: str = "combined",
) -> EnsembleModel:
    """Train one multi-kernel member per sub-bag subset.

    ``plan.class_a_ids`` is the negative (stable-control) class and
    ``plan.class_b_ids`` the positive (stable-DAT) class.  Member i sees
    exactly the rows of subset i, restricted to the selected features.
    """
    mkl_config = mkl_config or MklConfig()
    class_a = set(plan.class_a_ids)
    members = []
    for subset in plan.subsets:
        rows = data.rows_for(subset)
        labels = np.array([-1.0 if sid in class_a else 1.0 for sid in subset])
        if (labels > 0).all() or (labels < 0).all():
            raise ValidationError("a training subset lost one of its classes")
        raw = data.values[rows]
        x, modes = _prepare_member_matrix(raw, data.genetic_columns)
        specs = default_specs(data.blocks)
        stack = build_kernels(x, specs, data.blocks)
        state = train(stack, labels, mkl_config)
        members.append(
            MklModel(
                alpha=state["alpha"],
                beta=state["beta"],
                tau=state["tau"],
                specs=stack.specs,
                norm_constants=stack.norm_constants,
                blocks=data.blocks,
                training_rows=x,
                training_feature_ids=data.feature_ids,
                elbo_trace=state["elbo_trace"],
                converged=state["converged"],
                imputation_modes=tuple(float(m) for m in modes),
            )
        )
    return EnsembleModel(
        members=members, plan=plan, feature_set=feature_set, modality=modality
    )


def _member_probabilities(
    model: EnsembleModel, data: FeatureMatrix, rows: np.ndarray
) -> np.ndarray:
    """(F, n_subjects) probabilities from every member on the given rows."""
    probs = np.empty((len(model.members), rows.size))
    for i, member in enumerate(model.members):
        modes = np.asarray(member.imputation_modes, dtype=float)
        x = _apply_modes(data.values[rows], data.genetic_columns, modes)
        probs[i] = predict_from_features(member, x)
    return probs


def score_oob(
    model: EnsembleModel,
    data: FeatureMatrix,
    strata: Mapping[str, str],
    threshold: float = DEFAULT_THRESHOLD,
) -> DatScoreTable:
    """Out-of-bag scores for the training-class subjects.

    Each subject averages only the members whose training subset excluded
    that subject; a subject present in every subset cannot be scored and
    is listed as unscorable instead of receiving a biased estimate.
    """
    training_ids = list(model.plan.training_ids)
    rows = data.rows_for(training_ids)
    probs = _member_probabilities(model, data, rows)
    in_subset = np.array(
        [[sid in set(subset) for sid in training_ids] for subset in model.plan.subsets]
    )
    table = DatScoreTable(modality=model.modality, threshold=threshold)
    for j, sid in enumerate(training_ids):
        oob_members = ~in_subset[:, j]
        n = int(oob_members.sum())
        if n == 0:
            table.unscorable.append(sid)
            continue
        score = float(probs[oob_members, j].mean())
        table.rows.append(
            DatScoreRow(
                subject_id=sid,
                stratum=strata.get(sid, ""),
                score=score,
                n_contributing_members=n,
                predicted=DAT_PLUS if score >= threshold else DAT_MINUS,
            )
        )
    return table


def score_unseen(
    model: EnsembleModel,
    data: FeatureMatrix,
    subject_ids: Sequence[str],
    strata: Mapping[str, str],
    threshold: float = DEFAULT_THRESHOLD,
) -> DatScoreTable:
    """Average of all F members for subjects outside the training classes."""
    training = set(model.plan.training_ids)
    overlap = [sid for sid in subject_ids if sid in training]
    if overlap:
        raise ValidationError(
            f"subjects overlap the training classes: {', '.join(overlap[:5])}"
        )
    table = DatScoreTable(modality=model.modality, threshold=threshold)
    if not subject_ids:
        return table
    rows = data.rows_for(subject_ids)
    probs = _member_probabilities(model, data, rows)
    scores = probs.mean(axis=0)
    for j, sid in enumerate(subject_ids):
        table.rows.append(
            DatScoreRow(
                subject_id=sid,
                stratum=strata.get(sid, ""),
                score=float(scores[j]),
                n_contributing_members=len(model.members),
                predicted=DAT_PLUS if scores[j] >= threshold else DAT_MINUS,
            )
        )
    return table


def score_all_members(
    model: EnsembleModel,
    data: FeatureMatrix,
    subject_ids: Sequence[str],
    strata: Mapping[str, str],
    threshold: float = DEFAULT_THRESHOLD,
) -> DatScoreTable:
    """Score arbitrary subjects with every member (no out-of-bag masking).

    Intended for deployment-style scoring of new subjects; training
    subjects passed through this path get a warning because their scores
    use members that saw them.
    """
    training = set(model.plan.training_ids)
    seen = [sid for sid in subject_ids if sid in training]
    if seen:
        warnings.warn(
            f"{len(seen)} subject(s) were in the training classes; their scores "
            "use all members rather than the out-of-bag estimate"
        )
    table = DatScoreTable(modality=model.modality, threshold=threshold)
    if not subject_ids:
        return table
    rows = data.rows_for(subject_ids)
    probs = _member_probabilities(model, data, rows)
    scores = probs.mean(axis=0)
    for j, sid in enumerate(subject_ids):
        table.rows.append(
            DatScoreRow(
                subject_id=sid,
                stratum=strata.get(sid, ""),
                score=float(scores[j]),
                n_contributing_members=len(model.members),
                predicted=DAT_PLUS if scores[j] >= threshold else DAT_MINUS,
            )
        )
    return table


def threshold_labels(
    table: DatScoreTable, threshold: float = DEFAULT_THRESHOLD
) -> DatScoreTable:
    """Re-derive predicted labels at a different threshold (score >= t)."""
    out = DatScoreTable(
        modality=table.modality, threshold=threshold, unscorable=list(table.unscorable)
    )
    for r in table.rows:
        out.rows.append(
            DatScoreRow(
                subject_id=r.subject_id,
                stratum=r.stratum,
                score=r.score,
                n_contributing_members=r.n_contributing_members,
                predicted=DAT_PLUS if r.score >= threshold else DAT_MINUS,
            )
        )
    return out
