"""Synthetic cohort generator with planted, recoverable ground truth.

Genotypes: non-causal SNPs are drawn in Hardy-Weinberg equilibrium at a
uniform-random MAF; causal SNPs are drawn conditionally on trajectory via
a logistic risk whose log-odds is the causal minor-allele count weighted
by log(causal_or).  APOE-style presence features share that odds ratio,
so a null configuration (causal_or = 1) is associationless everywhere.

Volumes: baseline + covariate effects (TIV slope, sex and scanner
offsets) + noise, with DAT-typical atrophy subtracted on the affected
ROIs for the strata that carry established disease at baseline (pMCI,
eDAT, sDAT).  Progressive-NC subjects deliberately keep healthy volumes
while carrying risk genetics, and stable-MCI subjects keep healthy
volumes while their genetics are drawn from the progressive pool, giving
each modality a stratum only it can classify.

Timelines realize each requested stratum exactly and round-trip through
the stratifier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .cohort import Covariates, DiagnosisTimeline, Visit
from .errors import ValidationError
from .featsel import FeatureSet
from .harmonize import RoiVolumeTable
from .plink import (
    GenotypeMatrix,
    SampleRecord,
    VariantRecord,
    pack_calls,
    write_apoe_table,
    write_bed_trio,
)

DEFAULT_GROUP_SIZES = {
    "sNC": 109,
    "uNC": 22,
    "pNC": 14,
    "sMCI": 101,
    "pMCI": 155,
    "eDAT": 4,
    "sDAT": 138,
}

# strata whose causal genetics are drawn from the progressive pool; sMCI
# is planted there so genetics alone misreads it, as MRI alone misreads pNC
RISK_GENETICS_STRATA = frozenset({"pNC", "pMCI", "eDAT", "sDAT", "sMCI"})
# strata with established atrophy at baseline
ATROPHY_STRATA = frozenset({"pMCI", "eDAT", "sDAT"})

_VISIT_TEMPLATES = {
    "sNC": ((0, "NC", True), (12, "NC", False), (24, "NC", False)),
    "uNC": ((0, "NC", True), (12, "NC", False), (24, "MCI", False)),
    "pNC": ((0, "NC", True), (12, "MCI", False), (24, "DAT", False)),
    "sMCI": ((0, "MCI", True), (12, "MCI", False), (24, "MCI", False)),
    "pMCI": ((0, "MCI", True), (12, "MCI", False), (24, "DAT", False)),
    "eDAT": ((-6, "MCI", False), (0, "DAT", True), (12, "DAT", False)),
    "sDAT": ((0, "DAT", True), (12, "DAT", False), (24, "DAT", False)),
}

_APOE_E2_BASE = 0.12
_APOE_E3_BASE = 0.85
_APOE_E4_BASE = 0.25

_DK_CORTICAL = (
    "bankssts", "caudalanteriorcingulate", "caudalmiddlefrontal", "cuneus",
    "entorhinal", "fusiform", "inferiorparietal", "inferiortemporal",
    "isthmuscingulate", "lateraloccipital", "lateralorbitofrontal", "lingual",
    "medialorbitofrontal", "middletemporal", "parahippocampal", "paracentral",
    "parsopercularis", "parsorbitalis", "parstriangularis", "pericalcarine",
    "postcentral", "posteriorcingulate", "precentral", "precuneus",
    "rostralanteriorcingulate", "rostralmiddlefrontal", "superiorfrontal",
    "superiorparietal", "superiortemporal", "supramarginal", "frontalpole",
    "temporalpole", "transversetemporal", "insula",
)
_SUBCORTICAL = (
    "Hippocampus", "Amygdala", "Thalamus", "Caudate", "Putamen", "Pallidum",
    "Accumbens", "VentralDC", "Cerebellum-Cortex", "Lateral-Ventricle",
    "Inf-Lat-Vent",
)

DEFAULT_ROI_NAMES = tuple(
    [f"{side}_{name}" for name in _DK_CORTICAL + _SUBCORTICAL for side in ("L", "R")]
    + ["3rd-Ventricle"]
)


@dataclass
class SynthConfig:
    group_sizes: dict = field(default_factory=lambda: dict(DEFAULT_GROUP_SIZES))
    n_snps: int = 2000
    n_causal_snps: int = 10
    causal_or: float = 3.0
    maf_range: tuple = (0.2, 0.45)
    n_rois: int = 91
    atrophy_effect: float = 1.2
    noise_sd: float = 150.0
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.group_sizes) - set(DEFAULT_GROUP_SIZES)
        if unknown:
            raise ValidationError(f"unknown strata in group_sizes: {sorted(unknown)}")
        if any(v < 0 for v in self.group_sizes.values()):
            raise ValidationError("group sizes must be non-negative")
        if self.n_causal_snps > self.n_snps:
            raise ValidationError("cannot plant more causal SNPs than SNPs")
        lo, hi = self.maf_range
        if not (0.0 < lo <= hi <= 0.5):
            raise ValidationError("maf_range must lie within (0, 0.5]")
        if self.causal_or < 1.0:
            raise ValidationError("causal odds ratio must be >= 1")
        if self.noise_sd <= 0:
            raise ValidationError("noise_sd must be positive")

    def to_dict(self) -> dict:
        return {
            "group_sizes": dict(self.group_sizes),
            "n_snps": self.n_snps,
            "n_causal_snps": self.n_causal_snps,
            "causal_or": self.causal_or,
            "maf_range": list(self.maf_range),
            "n_rois": self.n_rois,
            "atrophy_effect": self.atrophy_effect,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        data = dict(data)
        if "maf_range" in data:
            data["maf_range"] = tuple(data["maf_range"])
        return cls(**data)


@dataclass
class GroundTruth:
    causal_snp_ids: tuple[str, ...]
    affected_roi_ids: tuple[str, ...]
    latent_risk: dict[str, float]
    apoe_odds_ratio: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "causal_snp_ids": list(self.causal_snp_ids),
                "affected_roi_ids": list(self.affected_roi_ids),
                "latent_risk": self.latent_risk,
                "apoe_odds_ratio": self.apoe_odds_ratio,
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        data = json.loads(text)
        return cls(
            causal_snp_ids=tuple(data["causal_snp_ids"]),
            affected_roi_ids=tuple(data["affected_roi_ids"]),
            latent_risk=dict(data["latent_risk"]),
            apoe_odds_ratio=data["apoe_odds_ratio"],
        )


@dataclass
class SyntheticDataset:
    genotypes: GenotypeMatrix
    volumes: RoiVolumeTable
    timelines: list[DiagnosisTimeline]
    covariates: dict[str, Covariates]
    apoe: dict[str, tuple[int, int, int]]
    ground_truth: GroundTruth

    def write(self, out_dir) -> dict[str, str]:
        """Write every pipeline input format; returns name -> path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "bed": out / "synthetic.bed",
            "bim": out / "synthetic.bim",
            "fam": out / "synthetic.fam",
            "volumes": out / "volumes.csv",
            "timelines": out / "timelines.csv",
            "covariates": out / "covariates.csv",
            "apoe": out / "apoe.csv",
            "ground_truth": out / "ground_truth.json",
        }
        write_bed_trio(self.genotypes, paths["bed"], paths["bim"], paths["fam"])
        from .cohort import write_covariates, write_timelines
        from .harmonize import write_volumes

        write_volumes(paths["volumes"], self.volumes)
        write_timelines(paths["timelines"], self.timelines)
        write_covariates(paths["covariates"], self.covariates)
        write_apoe_table(paths["apoe"], self.apoe)
        paths["ground_truth"].write_text(self.ground_truth.to_json(), encoding="utf-8")
        return {k: str(v) for k, v in paths.items()}


def _draw_class_conditioned_genotypes(
    rng: np.random.Generator,
    mafs: np.ndarray,
    log_or: float,
    n_positive: int,
    n_negative: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Sample causal genotypes conditionally on trajectory membership.

    Each causal SNP follows the retrospective law of a per-allele logistic
    risk model: the negative class is Hardy-Weinberg at the drawn MAF, the
    positive class Hardy-Weinberg at the odds-scaled frequency
    odds(p+) = causal_or * odds(p0).  Sampling per SNP keeps the marginal
    per-SNP class association at the full odds ratio (conditioning on a
    joint count sum would dilute it several-fold).  The recorded latent
    risk is the logistic of the weighted count sum, centred on the
    population mean.  Returns (positive pool, negative pool, positive
    risks, negative risks).
    """
    odds = np.exp(log_or) * mafs / (1.0 - mafs)
    maf_pos = odds / (1.0 + odds)
    pos = rng.binomial(2, maf_pos[None, :], size=(n_positive, mafs.size)).astype(np.int8)
    neg = rng.binomial(2, mafs[None, :], size=(n_negative, mafs.size)).astype(np.int8)

    intercept = -log_or * float((2.0 * mafs).sum())

    def risk(counts: np.ndarray) -> np.ndarray:
        logits = intercept + log_or * counts.sum(axis=1)
        return 1.0 / (1.0 + np.exp(-logits))

    return pos, neg, risk(pos), risk(neg)


def _apoe_frequencies(odds_ratio: float) -> dict[str, tuple[float, float]]:
    """(negative, positive) carrier frequencies per allele."""
    def shift(base: float, ratio: float) -> float:
        odds = ratio * base / (1.0 - base)
        return odds / (1.0 + odds)

    return {
        "e2": (_APOE_E2_BASE, shift(_APOE_E2_BASE, 1.0 / odds_ratio)),
        "e3": (_APOE_E3_BASE, _APOE_E3_BASE),
        "e4": (_APOE_E4_BASE, shift(_APOE_E4_BASE, odds_ratio)),
    }


def generate(config: SynthConfig) -> SyntheticDataset:
    """Generate one complete synthetic cohort; fixed seed, fixed bytes."""
    rng = np.random.default_rng(config.seed)
    strata_order = [s for s in DEFAULT_GROUP_SIZES if config.group_sizes.get(s, 0) > 0]
    subjects = []
    for stratum in strata_order:
        for _ in range(config.group_sizes[stratum]):
            subjects.append((f"SUB{len(subjects) + 1:04d}", stratum))
    if not subjects:
        raise ValidationError("group_sizes request an empty cohort")
    n = len(subjects)
    subject_ids = [sid for sid, _ in subjects]
    strata = {sid: stratum for sid, stratum in subjects}

    # --- timelines (round-trip through the stratifier by construction)
    timelines = [
        DiagnosisTimeline(sid, tuple(Visit(*v) for v in _VISIT_TEMPLATES[stratum]))
        for sid, stratum in subjects
    ]

    # --- genotypes
    mafs = rng.uniform(config.maf_range[0], config.maf_range[1], size=config.n_snps)
    causal_idx = np.sort(
        rng.choice(config.n_snps, size=config.n_causal_snps, replace=False)
    )
    counts = rng.binomial(2, mafs[None, :], size=(n, config.n_snps)).astype(np.int8)

    risk_rows = [i for i, (_, s) in enumerate(subjects) if s in RISK_GENETICS_STRATA]
    safe_rows = [i for i, (_, s) in enumerate(subjects) if s not in RISK_GENETICS_STRATA]
    latent_risk = {}
    if config.n_causal_snps:
        log_or = float(np.log(config.causal_or))
        pos_pool, neg_pool, pos_risk, neg_risk = _draw_class_conditioned_genotypes(
            rng, mafs[causal_idx], log_or, len(risk_rows), len(safe_rows)
        )
        counts[np.ix_(risk_rows, causal_idx)] = pos_pool
        counts[np.ix_(safe_rows, causal_idx)] = neg_pool
        for i, r in zip(risk_rows, pos_risk):
            latent_risk[subject_ids[i]] = r
        for i, r in zip(safe_rows, neg_risk):
            latent_risk[subject_ids[i]] = r
    else:
        latent_risk = {sid: 0.5 for sid in subject_ids}

    variants = tuple(
        VariantRecord(
            chromosome=str(1 + (j % 22)),
            snp_id=f"rs{1000000 + j}",
            genetic_distance=0.0,
            base_pair_position=10_000 + 137 * j,
            allele1="A",
            allele2="B",
        )
        for j in range(config.n_snps)
    )
    samples = tuple(
        SampleRecord(family_id=f"FAM{i + 1:04d}", individual_id=sid)
        for i, sid in enumerate(subject_ids)
    )
    # minor-allele counts -> raw codes with allele2 as the counted allele
    to_raw = np.array([0, 2, 3], dtype=np.uint8)  # 0->hom_a1, 1->het, 2->hom_a2
    genotypes = GenotypeMatrix(
        samples=samples, variants=variants, calls=pack_calls(to_raw[counts])
    )

    # --- APOE carrier table tied to the same odds ratio
    is_risk = np.zeros(n, dtype=bool)
    is_risk[risk_rows] = True
    apoe = {}
    freqs = _apoe_frequencies(config.causal_or)
    for i, sid in enumerate(subject_ids):
        flags = []
        for allele in ("e2", "e3", "e4"):
            f_neg, f_pos = freqs[allele]
            flags.append(int(rng.random() < (f_pos if is_risk[i] else f_neg)))
        apoe[sid] = tuple(flags)

    # --- covariates
    sexes = rng.choice(["male", "female"], size=n)
    field_strengths = rng.choice(["1.5", "3.0"], size=n, p=[0.4, 0.6])
    scanners = rng.choice(["scannerA", "scannerB", "scannerC"], size=n)
    tivs = rng.normal(1_450_000.0, 120_000.0, size=n)
    ages = rng.normal(75.0, 5.0, size=n)
    covariates = {
        sid: Covariates(
            age=float(ages[i]),
            sex=str(sexes[i]),
            field_strength=str(field_strengths[i]),
            scanner=str(scanners[i]),
            tiv=float(tivs[i]),
        )
        for i, sid in enumerate(subject_ids)
    }

    # --- ROI volumes
    roi_names = _roi_names(config.n_rois)
    n_affected = min(6, config.n_rois)
    affected_idx = np.sort(rng.choice(config.n_rois, size=n_affected, replace=False))
    base = rng.uniform(3000.0, 9000.0, size=config.n_rois)
    tiv_slope = rng.uniform(0.0005, 0.003, size=config.n_rois)
    sex_offset = rng.uniform(-0.02, 0.02, size=config.n_rois) * base
    scanner_levels = {"scannerA": 0.0, "scannerB": 1.0, "scannerC": 2.0}
    scanner_offset = rng.uniform(-0.01, 0.01, size=config.n_rois) * base
    fs_offset = rng.uniform(-0.01, 0.01, size=config.n_rois) * base

    volumes = np.empty((n, config.n_rois))
    atrophy = config.atrophy_effect * config.noise_sd
    for i, sid in enumerate(subject_ids):
        row = (
            base
            + tiv_slope * (tivs[i] - 1_450_000.0)
            + (sex_offset if sexes[i] == "female" else 0.0)
            + scanner_offset * scanner_levels[str(scanners[i])]
            + (fs_offset if field_strengths[i] == "3.0" else 0.0)
            + rng.normal(0.0, config.noise_sd, size=config.n_rois)
        )
        if strata[sid] in ATROPHY_STRATA:
            row[affected_idx] -= atrophy
        volumes[i] = row
    volumes = np.maximum(volumes, 1.0)

    ground_truth = GroundTruth(
        causal_snp_ids=tuple(variants[j].snp_id for j in causal_idx),
        affected_roi_ids=tuple(roi_names[j] for j in affected_idx),
        latent_risk=latent_risk,
        apoe_odds_ratio=config.causal_or,
    )
    return SyntheticDataset(
        genotypes=genotypes,
        volumes=RoiVolumeTable(tuple(subject_ids), roi_names, volumes),
        timelines=timelines,
        covariates=covariates,
        apoe=apoe,
        ground_truth=ground_truth,
    )


def _roi_names(n_rois: int) -> tuple[str, ...]:
    if n_rois <= len(DEFAULT_ROI_NAMES):
        return DEFAULT_ROI_NAMES[:n_rois]
    extra = tuple(
        f"region{j:03d}" for j in range(n_rois - len(DEFAULT_ROI_NAMES))
    )
    return DEFAULT_ROI_NAMES + extra


def describe_truth(gt: GroundTruth, selected: FeatureSet) -> dict:
    """Recall / precision of the planted causal SNPs among selected features.

    Feature ids may carry a modality namespace prefix ("snp:...", which is
    stripped before matching).  An empty intersection with an empty
    denominator reports zero with a flag rather than dividing by zero.
    """
    chosen = {f.feature_id.split(":", 1)[-1] for f in selected.features}
    causal = set(gt.causal_snp_ids)
    hits = chosen & causal
    recall = len(hits) / len(causal) if causal else 0.0
    precision = len(hits) / len(chosen) if chosen else 0.0
    return {
        "n_causal": len(causal),
        "n_selected": len(chosen),
        "n_hits": len(hits),
        "recall": recall,
        "precision": precision,
        "degenerate": not causal or not chosen,
        "hits": sorted(hits),
    }


def recovery_of_rois(gt: GroundTruth, selected: FeatureSet) -> dict:
    """Recall of the planted atrophic ROIs among selected MRI features."""
    chosen = {f.feature_id.split(":", 1)[-1] for f in selected.features}
    affected = set(gt.affected_roi_ids)
    hits = chosen & affected
    return {
        "n_affected": len(affected),
        "n_hits": len(hits),
        "recall": len(hits) / len(affected) if affected else 0.0,
        "hits": sorted(hits),
    }


def stratum_table(dataset: SyntheticDataset) -> Mapping[str, str]:
    """subject_id -> stratum for the generated cohort."""
    from .cohort import stratify

    return {t.subject_id: stratify(t).stratum for t in dataset.timelines}
