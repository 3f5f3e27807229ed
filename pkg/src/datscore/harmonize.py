"""GLM-based nuisance removal for ROI volumes (w-scores).

A per-ROI ordinary least squares model (intercept, sex, scanner field
strength, scanner type, TIV) is fitted on a reference group of healthy
controls; every subject is then scored as
``w = (observed - predicted) / residual_sd`` with the frozen model.
Age is deliberately not regressed out.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import qr
from sklearn.base import BaseEstimator, TransformerMixin

from .cohort import Covariates
from .errors import DataFormatError, NumericalError, ValidationError

CATEGORICAL_COVARIATES = ("sex", "field_strength", "scanner")
NUMERIC_COVARIATES = ("tiv",)


@dataclass
class RoiVolumeTable:
    """Subjects x ROI volumes in cubic millimetres."""

    subject_ids: tuple[str, ...]
    roi_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        self.subject_ids = tuple(self.subject_ids)
        self.roi_names = tuple(self.roi_names)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.subject_ids), len(self.roi_names)):
            raise ValidationError("volume matrix shape does not match id lists")
        if not np.isfinite(self.values).all():
            raise ValidationError("ROI volumes must be finite")
        if self.values.size and (self.values <= 0).any():
            raise ValidationError("ROI volumes must be positive")

    def rows_for(self, subject_ids: Sequence[str]) -> np.ndarray:
        index = {sid: i for i, sid in enumerate(self.subject_ids)}
        return np.array([index[sid] for sid in subject_ids], dtype=int)


@dataclass
class WScoreTable:
    """Subjects x ROI standardized residuals; NaN rows mark unscored subjects."""

    subject_ids: tuple[str, ...]
    roi_names: tuple[str, ...]
    values: np.ndarray
    flagged_missing: tuple[str, ...] = ()

    def __post_init__(self):
        self.subject_ids = tuple(self.subject_ids)
        self.roi_names = tuple(self.roi_names)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.subject_ids), len(self.roi_names)):
            raise ValidationError("w-score matrix shape does not match id lists")
        self.flagged_missing = tuple(self.flagged_missing)

    def rows_for(self, subject_ids: Sequence[str]) -> np.ndarray:
        index = {sid: i for i, sid in enumerate(self.subject_ids)}
        return np.array([index[sid] for sid in subject_ids], dtype=int)


@dataclass
class GlmModel:
    """Frozen per-ROI OLS fit: coefficients, residual sd, encoder levels."""

    roi_names: tuple[str, ...]
    column_names: tuple[str, ...]
    coefficients: np.ndarray  # (n_columns, n_rois)
    residual_sd: np.ndarray  # (n_rois,)
    categorical_levels: dict[str, tuple[str, ...]]
    reference_group: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "roi_names": list(self.roi_names),
                "column_names": list(self.column_names),
                "coefficients": [[float(x) for x in row] for row in self.coefficients],
                "residual_sd": [float(x) for x in self.residual_sd],
                "categorical_levels": {
                    k: list(v) for k, v in self.categorical_levels.items()
                },
                "reference_group": list(self.reference_group),
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GlmModel":
        data = json.loads(text)
        return cls(
            roi_names=tuple(data["roi_names"]),
            column_names=tuple(data["column_names"]),
            coefficients=np.asarray(data["coefficients"], dtype=np.float64),
            residual_sd=np.asarray(data["residual_sd"], dtype=np.float64),
            categorical_levels={
                k: tuple(v) for k, v in data["categorical_levels"].items()
            },
            reference_group=tuple(data["reference_group"]),
        )


def _learn_levels(
    covariates: Mapping[str, Covariates], subject_ids: Sequence[str]
) -> dict[str, tuple[str, ...]]:
    levels = {}
    for name in CATEGORICAL_COVARIATES:
        values = sorted({str(getattr(covariates[sid], name)) for sid in subject_ids})
        levels[name] = tuple(values)
    return levels


def _design_row(
    cov: Covariates, levels: Mapping[str, tuple[str, ...]]
) -> Optional[list[float]]:
    """One design-matrix row, or None when a level was never seen in fitting."""
    row = [1.0]
    for name in CATEGORICAL_COVARIATES:
        value = str(getattr(cov, name))
        known = levels[name]
        if value not in known:
            return None
        # first level dropped to keep the design full rank
        row.extend(1.0 if value == level else 0.0 for level in known[1:])
    row.append(float(cov.tiv))
    return row


def _column_names(levels: Mapping[str, tuple[str, ...]]) -> tuple[str, ...]:
    names = ["intercept"]
    for name in CATEGORICAL_COVARIATES:
        names.extend(f"{name}={level}" for level in levels[name][1:])
    names.append("tiv")
    return tuple(names)


def _name_collinear_columns(design: np.ndarray, names: Sequence[str]) -> list[str]:
    """Identify columns that are linear combinations of earlier ones."""
    _, r, piv = qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.shape) * np.finfo(np.float64).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    return sorted(names[j] for j in piv[rank:])


def fit_glm(
    volumes: RoiVolumeTable,
    covariates: Mapping[str, Covariates],
    reference_subjects: Sequence[str],
) -> GlmModel:
    """Fit per-ROI OLS on the reference subjects only.

    ``residual_sd`` uses the n - p denominator, so reference w-scores have
    unit scale by construction.  A rank-deficient design or a residual sd
    at numerical zero is reported as an error rather than propagated.
    """
    reference_subjects = list(reference_subjects)
    missing = [sid for sid in reference_subjects if sid not in covariates]
    if missing:
        raise ValidationError(
            f"covariates missing for reference subjects: {', '.join(missing[:5])}"
        )
    levels = _learn_levels(covariates, reference_subjects)
    names = _column_names(levels)
    design = np.array(
        [_design_row(covariates[sid], levels) for sid in reference_subjects],
        dtype=np.float64,
    )
    n, p = design.shape
    if n <= p:
        raise ValidationError(
            f"reference group of {n} is too small for {p} coefficients"
        )
    rank = np.linalg.matrix_rank(design)
    if rank < p:
        collinear = _name_collinear_columns(design, names)
        raise ValidationError(
            f"design matrix is rank deficient; collinear columns: {', '.join(collinear)}"
        )
    y = volumes.values[volumes.rows_for(reference_subjects), :]
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - design @ coef
    residual_sd = np.sqrt((residuals**2).sum(axis=0) / (n - p))
    guard = 1e-10 * max(1.0, float(np.abs(y).max())) if y.size else 1e-10
    degenerate = np.nonzero(residual_sd < guard)[0]
    if degenerate.size:
        rois = ", ".join(volumes.roi_names[j] for j in degenerate[:5])
        raise NumericalError(
            f"residual sd underflow (volumes exactly explained by covariates) "
            f"for ROI(s): {rois}"
        )
    return GlmModel(
        roi_names=volumes.roi_names,
        column_names=names,
        coefficients=coef,
        residual_sd=residual_sd,
        categorical_levels=levels,
        reference_group=tuple(reference_subjects),
    )


def compute_wscores(
    volumes: RoiVolumeTable,
    covariates: Mapping[str, Covariates],
    model: GlmModel,
) -> WScoreTable:
    """Score every subject with the frozen model.

    Subjects with absent covariates (or a categorical level unseen during
    fitting) are flagged and emitted as NaN rows.
    """
    if volumes.roi_names != model.roi_names:
        raise ValidationError("ROI names do not match the fitted model")
    n = len(volumes.subject_ids)
    w = np.full((n, len(model.roi_names)), np.nan)
    flagged = []
    for i, sid in enumerate(volumes.subject_ids):
        cov = covariates.get(sid)
        row = _design_row(cov, model.categorical_levels) if cov is not None else None
        if row is None:
            flagged.append(sid)
            continue
        predicted = np.asarray(row) @ model.coefficients
        w[i] = (volumes.values[i] - predicted) / model.residual_sd
    return WScoreTable(
        subject_ids=volumes.subject_ids,
        roi_names=model.roi_names,
        values=w,
        flagged_missing=tuple(flagged),
    )


class WScoreHarmonizer(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`fit_glm` / :func:`compute_wscores`.

    fit(volumes, covariates, reference_subjects) freezes the GLM;
    transform(volumes, covariates) returns a :class:`WScoreTable`.
    """

    def fit(self, volumes: RoiVolumeTable, covariates=None, reference_subjects=None):
        if covariates is None:
            raise ValidationError("covariates are required to fit the harmonizer")
        if reference_subjects is None:
            reference_subjects = volumes.subject_ids
        self.model_ = fit_glm(volumes, covariates, reference_subjects)
        return self

    def transform(self, volumes: RoiVolumeTable, covariates=None) -> WScoreTable:
        if not hasattr(self, "model_"):
            raise ValidationError("harmonizer is not fitted")
        if covariates is None:
            raise ValidationError("covariates are required to compute w-scores")
        return compute_wscores(volumes, covariates, self.model_)


def read_volumes(path) -> RoiVolumeTable:
    """Read a volume CSV: subject_id column followed by named ROI columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "subject_id":
            raise DataFormatError(f"{path}: first column must be subject_id")
        roi_names = tuple(header[1:])
        subject_ids = []
        rows = []
        for row in reader:
            subject_ids.append(row[0])
            rows.append([float(x) for x in row[1:]])
    values = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, len(roi_names)))
    return RoiVolumeTable(tuple(subject_ids), roi_names, values)


def write_volumes(path, table: RoiVolumeTable) -> None:
    _write_subject_matrix(path, table.subject_ids, table.roi_names, table.values)


def read_wscores(path) -> WScoreTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "subject_id":
            raise DataFormatError(f"{path}: first column must be subject_id")
        roi_names = tuple(header[1:])
        subject_ids = []
        rows = []
        for row in reader:
            subject_ids.append(row[0])
            rows.append([float(x) if x != "" else np.nan for x in row[1:]])
    values = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, len(roi_names)))
    flagged = tuple(
        sid for sid, row in zip(subject_ids, values) if np.isnan(row).all()
    )
    return WScoreTable(tuple(subject_ids), roi_names, values, flagged)


def write_wscores(path, table: WScoreTable) -> None:
    _write_subject_matrix(path, table.subject_ids, table.roi_names, table.values)


def _write_subject_matrix(path, subject_ids, colnames, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", *colnames])
        for sid, row in zip(subject_ids, values):
            writer.writerow(
                [sid, *("" if np.isnan(x) else repr(float(x)) for x in row)]
            )
