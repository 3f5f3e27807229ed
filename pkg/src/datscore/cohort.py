"""Longitudinal diagnosis timelines and the seven-way cohort stratification.

Subjects are grouped by their diagnosis at the baseline imaging visit plus
whether they ever progress (NC -> MCI -> DAT) anywhere in the study
window.  Four of the seven strata lie on the progressive (DAT+)
trajectory; the other three never receive a DAT diagnosis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .errors import DataFormatError, ValidationError

DIAGNOSES = ("NC", "MCI", "DAT")
STRATA = ("sNC", "uNC", "pNC", "sMCI", "pMCI", "eDAT", "sDAT")
DAT_PLUS_STRATA = frozenset({"pNC", "pMCI", "eDAT", "sDAT"})
TRAINING_STRATA = ("sNC", "sDAT")

DAT_MINUS = "DAT_minus"
DAT_PLUS = "DAT_plus"


class Visit(NamedTuple):
    month: int
    diagnosis: str
    is_imaging: bool


@dataclass(frozen=True)
class DiagnosisTimeline:
    """Ordered clinical visits for one subject; needs >= 1 imaging visit."""

    subject_id: str
    visits: tuple[Visit, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "visits", tuple(Visit(*v) for v in self.visits)
        )
        if not self.visits:
            raise ValidationError(f"{self.subject_id}: timeline has no visits")
        months = [v.month for v in self.visits]
        if any(b <= a for a, b in zip(months, months[1:])):
            raise ValidationError(
                f"{self.subject_id}: visit months must be strictly increasing"
            )
        if not any(v.is_imaging for v in self.visits):
            raise ValidationError(f"{self.subject_id}: no imaging visit")
        for v in self.visits:
            if v.diagnosis not in DIAGNOSES:
                raise ValidationError(
                    f"{self.subject_id}: unknown diagnosis {v.diagnosis!r}"
                )

    @property
    def baseline(self) -> Visit:
        """The earliest imaging visit."""
        return next(v for v in self.visits if v.is_imaging)


@dataclass(frozen=True)
class StratumLabel:
    stratum: str
    trajectory: str

    def __post_init__(self):
        if self.stratum not in STRATA:
            raise ValidationError(f"unknown stratum {self.stratum!r}")
        expected = DAT_PLUS if self.stratum in DAT_PLUS_STRATA else DAT_MINUS
        if self.trajectory != expected:
            raise ValidationError(
                f"stratum {self.stratum} implies trajectory {expected}, "
                f"got {self.trajectory}"
            )


def _label(stratum: str) -> StratumLabel:
    return StratumLabel(
        stratum=stratum,
        trajectory=DAT_PLUS if stratum in DAT_PLUS_STRATA else DAT_MINUS,
    )


def stratify(timeline: DiagnosisTimeline) -> StratumLabel:
    """Assign one of the seven strata from a subject's diagnosis history.

    Baseline-NC subjects are pNC if they ever reach DAT, uNC if they reach
    MCI but never DAT, else sNC; baseline-MCI subjects split into pMCI /
    sMCI on whether DAT is ever reached; baseline-DAT subjects are eDAT
    when some pre-baseline visit carried an NC or MCI status, else sDAT.
    A DAT diagnosis followed by a later NC or MCI visit is not
    representable in this scheme and is rejected.
    """
    visits = timeline.visits
    first_dat = next((i for i, v in enumerate(visits) if v.diagnosis == "DAT"), None)
    if first_dat is not None:
        for v in visits[first_dat + 1 :]:
            if v.diagnosis != "DAT":
                raise ValidationError(
                    f"{timeline.subject_id}: diagnosis regressed from DAT to "
                    f"{v.diagnosis} at month {v.month}"
                )
    baseline = timeline.baseline
    diagnoses = {v.diagnosis for v in visits}
    if baseline.diagnosis == "NC":
        if "DAT" in diagnoses:
            return _label("pNC")
        if "MCI" in diagnoses:
            return _label("uNC")
        return _label("sNC")
    if baseline.diagnosis == "MCI":
        return _label("pMCI" if "DAT" in diagnoses else "sMCI")
    # baseline DAT: pre-baseline visits are non-imaging by construction
    before = [v for v in visits if v.month < baseline.month]
    if any(v.diagnosis in ("NC", "MCI") for v in before):
        return _label("eDAT")
    return _label("sDAT")


@dataclass(frozen=True)
class Covariates:
    age: float
    sex: str
    field_strength: str
    scanner: str
    tiv: float


@dataclass
class CohortSubject:
    subject_id: str
    label: StratumLabel
    covariates: Optional[Covariates]
    missing_modalities: tuple[str, ...] = ()

    @property
    def training_eligible(self) -> bool:
        return not self.missing_modalities and self.covariates is not None


@dataclass
class Cohort:
    """Stratified subjects joined against genotype and MRI row indices."""

    subjects: list[CohortSubject]
    genotype_row: dict[str, int] = field(default_factory=dict)
    mri_row: dict[str, int] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in STRATA}
        for subject in self.subjects:
            out[subject.label.stratum] += 1
        return out

    def ids_in_stratum(self, stratum: str, eligible_only: bool = True) -> list[str]:
        return [
            s.subject_id
            for s in self.subjects
            if s.label.stratum == stratum
            and (s.training_eligible or not eligible_only)
        ]

    @property
    def n_training_eligible(self) -> int:
        return sum(1 for s in self.subjects if s.training_eligible)


def build_cohort(
    timelines: Iterable[DiagnosisTimeline],
    covariate_table: Mapping[str, Covariates],
    genotype_sample_ids: Sequence[str],
    mri_subject_ids: Sequence[str],
) -> Cohort:
    """Join timelines, covariates and modality tables into a cohort.

    Subjects missing a modality (or covariates) stay in the cohort for
    reporting but are flagged and excluded from training.
    """
    genotype_row = {sid: i for i, sid in enumerate(genotype_sample_ids)}
    mri_row = {sid: i for i, sid in enumerate(mri_subject_ids)}
    subjects = []
    for timeline in timelines:
        sid = timeline.subject_id
        missing = []
        if sid not in genotype_row:
            missing.append("genotype")
        if sid not in mri_row:
            missing.append("mri")
        covariates = covariate_table.get(sid)
        if covariates is None:
            missing.append("covariates")
        subjects.append(
            CohortSubject(
                subject_id=sid,
                label=stratify(timeline),
                covariates=covariates,
                missing_modalities=tuple(missing),
            )
        )
    return Cohort(subjects=subjects, genotype_row=genotype_row, mri_row=mri_row)


def read_timelines(path) -> list[DiagnosisTimeline]:
    """Read the longitudinal CSV (subject_id,month,diagnosis,is_imaging)."""
    per_subject: dict[str, list[Visit]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "month", "diagnosis", "is_imaging"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataFormatError(
                f"{path}: timeline CSV needs columns subject_id,month,diagnosis,is_imaging"
            )
        for row in reader:
            sid = row["subject_id"]
            if sid not in per_subject:
                per_subject[sid] = []
                order.append(sid)
            per_subject[sid].append(
                Visit(
                    month=int(row["month"]),
                    diagnosis=row["diagnosis"],
                    is_imaging=row["is_imaging"].strip().lower() in ("1", "true", "yes"),
                )
            )
    return [
        DiagnosisTimeline(sid, tuple(sorted(per_subject[sid], key=lambda v: v.month)))
        for sid in order
    ]


def write_timelines(path, timelines: Iterable[DiagnosisTimeline]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "month", "diagnosis", "is_imaging"])
        for timeline in timelines:
            for v in timeline.visits:
                writer.writerow(
                    [timeline.subject_id, v.month, v.diagnosis, int(v.is_imaging)]
                )


def read_covariates(path) -> dict[str, Covariates]:
    """Read the covariate CSV (subject_id,age,sex,field_strength,scanner,tiv)."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "age", "sex", "field_strength", "scanner", "tiv"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataFormatError(
                f"{path}: covariate CSV needs columns "
                "subject_id,age,sex,field_strength,scanner,tiv"
            )
        for row in reader:
            table[row["subject_id"]] = Covariates(
                age=float(row["age"]),
                sex=row["sex"],
                field_strength=row["field_strength"],
                scanner=row["scanner"],
                tiv=float(row["tiv"]),
            )
    return table


def write_covariates(path, table: Mapping[str, Covariates]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "age", "sex", "field_strength", "scanner", "tiv"])
        for sid, c in table.items():
            writer.writerow([sid, repr(float(c.age)), c.sex, c.field_strength, c.scanner, repr(float(c.tiv))])
