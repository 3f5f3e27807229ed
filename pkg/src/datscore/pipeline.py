"""End-to-end pipeline: QC -> w-scores -> stratify -> select -> train -> score.

Every stage reads its inputs from disk and writes its outputs to disk, so
any stage can be re-run in isolation and a resumed run produces the same
artifacts as a fresh one.  All randomness derives from the single config
seed; report-bundle files contain no timestamps, making two runs with the
same config byte-identical.  Wall-clock timings and environment versions
live in ``run_manifest.json`` at the output root, outside the bundle.
"""

from __future__ import annotations

import hashlib
import io
import json
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .cohort import (
    Cohort,
    build_cohort,
    read_covariates,
    read_timelines,
    STRATA,
    TRAINING_STRATA,
)
from .ensemble import (
    DatScoreTable,
    EnsembleModel,
    FeatureMatrix,
    score_all_members,
    score_oob,
    score_unseen,
    train_ensemble,
)
from .errors import DataFormatError, ValidationError
from .featsel import (
    FeatureSelection,
    FeatureSet,
    GENETIC_PREFIX,
    MRI_PREFIX,
    SubBaggedFrequencySelector,
    SubBagPlan,
    combine_modalities,
    make_subbag_plan,
)
from .harmonize import (
    WScoreHarmonizer,
    WScoreTable,
    read_volumes,
    read_wscores,
    write_wscores,
)
from .metrics import confusion_metrics, paired_one_sided_t
from .mkl import MklConfig
from .plink import read_apoe_table, read_bed_trio, recode_minor_allele, append_apoe, RecodedGenotypes
from .qc import QcThresholds, run_qc_pipeline
from .synth import SynthConfig, generate

MODALITIES = ("genetic", "mri", "combined")
SELECTORS = ("fisher_ttest", "lasso")


@dataclass
class PipelinePaths:
    bed: str = "data/synthetic.bed"
    bim: str = "data/synthetic.bim"
    fam: str = "data/synthetic.fam"
    volumes: str = "data/volumes.csv"
    timelines: str = "data/timelines.csv"
    covariates: str = "data/covariates.csv"
    apoe: str = "data/apoe.csv"
    outdir: str = "out"

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class SubBagConfig:
    f: int = 10
    ratio: float = 0.8

    def __post_init__(self):
        if self.f < 1:
            raise ValidationError("subbag.f must be at least 1")
        if not 0.0 < self.ratio <= 1.0:
            raise ValidationError("subbag.ratio must lie in (0, 1]")


@dataclass
class PipelineConfig:
    paths: PipelinePaths = field(default_factory=PipelinePaths)
    qc: QcThresholds = field(default_factory=QcThresholds)
    subbag: SubBagConfig = field(default_factory=SubBagConfig)
    k_per_modality: int = 17
    mkl: MklConfig = field(default_factory=MklConfig)
    selector: str = "fisher_ttest"
    modalities: tuple[str, ...] = MODALITIES
    seed: int = 0
    threshold: float = 0.5
    repeats: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.k_per_modality < 1:
            raise ValidationError("k_per_modality must be at least 1")
        if self.selector not in SELECTORS:
            raise ValidationError(
                f"selector must be one of {SELECTORS}, got {self.selector!r}"
            )
        bad = [m for m in self.modalities if m not in MODALITIES]
        if bad:
            raise ValidationError(f"unknown modalities: {bad}")
        if not self.modalities:
            raise ValidationError("at least one modality is required")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError("threshold must lie in [0, 1]")
        if self.repeats < 1:
            raise ValidationError("repeats must be at least 1")
        self.modalities = tuple(self.modalities)

    def to_dict(self) -> dict:
        return {
            "paths": self.paths.to_dict(),
            "qc": {
                "max_snp_missing_rate": self.qc.max_snp_missing_rate,
                "max_subject_missing_rate": self.qc.max_subject_missing_rate,
                "min_maf": self.qc.min_maf,
                "hwe_alpha": self.qc.hwe_alpha,
                "het_sd_window": self.qc.het_sd_window,
            },
            "subbag": {"f": self.subbag.f, "ratio": self.subbag.ratio},
            "k_per_modality": self.k_per_modality,
            "mkl": {
                "tau": self.mkl.tau,
                "max_iters": self.mkl.max_iters,
                "tol": self.mkl.tol,
            },
            "selector": self.selector,
            "modalities": list(self.modalities),
            "seed": self.seed,
            "threshold": self.threshold,
            "repeats": self.repeats,
            "synth": self.synth.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return cls(
            paths=PipelinePaths(**data.get("paths", {})),
            qc=QcThresholds(**data.get("qc", {})),
            subbag=SubBagConfig(**data.get("subbag", {})),
            k_per_modality=data.get("k_per_modality", 17),
            mkl=MklConfig(**data.get("mkl", {})),
            selector=data.get("selector", "fisher_ttest"),
            modalities=tuple(data.get("modalities", MODALITIES)),
            seed=data.get("seed", 0),
            threshold=data.get("threshold", 0.5),
            repeats=data.get("repeats", 1),
            synth=SynthConfig.from_dict(data.get("synth", {})),
        )

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON config: {exc}") from exc
        return cls.from_dict(data)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def stage_seed(config_seed: int, stage: str, repeat: int = 0) -> int:
    """A stable 32-bit child seed per (config seed, stage, repeat)."""
    stages = ("plan", "select_genetic", "select_mri", "train", "score")
    key = (int(config_seed) & 0xFFFFFFFF, stages.index(stage), repeat)
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_arrays(path, **arrays) -> None:
    """Write arrays as an npz-compatible zip with fixed timestamps."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(
                buf, np.asarray(arrays[name]), allow_pickle=False
            )
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_arrays(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return {name: data[name] for name in data.files}


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage_simulate(config: PipelineConfig) -> dict[str, str]:
    """Generate a synthetic dataset at the configured input paths."""
    dataset = generate(config.synth)
    paths = config.paths
    base = Path(paths.bed).parent
    written = dataset.write(base)
    # dataset.write uses canonical names; align with configured paths
    renames = {
        "bed": paths.bed,
        "bim": paths.bim,
        "fam": paths.fam,
        "volumes": paths.volumes,
        "timelines": paths.timelines,
        "covariates": paths.covariates,
        "apoe": paths.apoe,
    }
    final = {}
    for key, target in renames.items():
        target = Path(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        source = Path(written[key])
        if source.resolve() != target.resolve():
            target.write_bytes(source.read_bytes())
            source.unlink()
        final[key] = str(target)
    final["ground_truth"] = written["ground_truth"]
    return final


def _intermediate_dir(config: PipelineConfig) -> Path:
    path = Path(config.paths.outdir) / "intermediate"
    path.mkdir(parents=True, exist_ok=True)
    return path


def stage_qc(config: PipelineConfig) -> RecodedGenotypes:
    """Ingest the PLINK trio, recode, append APOE, run QC, persist."""
    matrix = read_bed_trio(config.paths.bed, config.paths.bim, config.paths.fam)
    recoded = recode_minor_allele(matrix)
    apoe = read_apoe_table(config.paths.apoe)
    recoded = append_apoe(recoded, apoe)
    cleaned, report = run_qc_pipeline(recoded, config.qc, seed=config.seed)
    report.per_filter_counts["n_subjects_out"] = cleaned.n_subjects
    report.per_filter_counts["n_features_out"] = cleaned.n_features
    inter = _intermediate_dir(config)
    save_arrays(
        inter / "genotypes_qc.npz",
        matrix=cleaned.matrix,
        sample_ids=np.array(cleaned.sample_ids),
        feature_ids=np.array(cleaned.feature_ids),
        minor_alleles=np.array(cleaned.minor_alleles),
        is_snp=cleaned.is_snp,
        all_missing=cleaned.all_missing,
    )
    _write_text(inter / "qc_report.json", report.to_json())
    return cleaned


def load_qc_genotypes(config: PipelineConfig) -> RecodedGenotypes:
    data = load_arrays(_intermediate_dir(config) / "genotypes_qc.npz")
    return RecodedGenotypes(
        matrix=data["matrix"],
        sample_ids=tuple(str(s) for s in data["sample_ids"]),
        feature_ids=tuple(str(s) for s in data["feature_ids"]),
        minor_alleles=tuple(str(s) for s in data["minor_alleles"]),
        is_snp=data["is_snp"],
        all_missing=data["all_missing"],
    )


def stage_wscore(config: PipelineConfig) -> WScoreTable:
    """Fit the harmonization GLM on stable controls and score everyone."""
    volumes = read_volumes(config.paths.volumes)
    covariates = read_covariates(config.paths.covariates)
    timelines = read_timelines(config.paths.timelines)
    cohort = build_cohort(timelines, covariates, volumes.subject_ids, volumes.subject_ids)
    have_volumes = set(volumes.subject_ids)
    reference = [
        s.subject_id
        for s in cohort.subjects
        if s.label.stratum == "sNC"
        and s.subject_id in have_volumes
        and s.covariates is not None
    ]
    if not reference:
        raise ValidationError("no stable-control subjects available as GLM reference")
    harmonizer = WScoreHarmonizer().fit(volumes, covariates, reference)
    wscores = harmonizer.transform(volumes, covariates)
    inter = _intermediate_dir(config)
    write_wscores(inter / "wscores.csv", wscores)
    _write_text(inter / "glm_model.json", harmonizer.model_.to_json())
    return wscores


def _assemble_cohort(config: PipelineConfig, genotypes, wscores) -> Cohort:
    timelines = read_timelines(config.paths.timelines)
    covariates = read_covariates(config.paths.covariates)
    scored = [
        sid
        for sid in wscores.subject_ids
        if sid not in set(wscores.flagged_missing)
    ]
    return build_cohort(timelines, covariates, genotypes.sample_ids, scored)


def _plan_from_cohort(config: PipelineConfig, cohort: Cohort, repeat: int = 0) -> SubBagPlan:
    class_a = cohort.ids_in_stratum("sNC")
    class_b = cohort.ids_in_stratum("sDAT")
    if not class_a or not class_b:
        raise ValidationError(
            "training requires non-empty sNC and sDAT strata with both modalities"
        )
    return make_subbag_plan(
        class_a,
        class_b,
        f=config.subbag.f,
        ratio=config.subbag.ratio,
        seed=stage_seed(config.seed, "plan", repeat),
    )


def stage_select(
    config: PipelineConfig, repeat: int = 0, persist: bool = True
) -> dict[str, FeatureSet]:
    """Run per-modality sub-bagged selection; emits plan and feature sets."""
    genotypes = load_qc_genotypes(config)
    wscores = read_wscores(_intermediate_dir(config) / "wscores.csv")
    cohort = _assemble_cohort(config, genotypes, wscores)
    plan = _plan_from_cohort(config, cohort, repeat)

    need_genetic = bool({"genetic", "combined"} & set(config.modalities))
    need_mri = bool({"mri", "combined"} & set(config.modalities))
    sets: dict[str, FeatureSet] = {}
    selections: dict[str, list] = {}

    if need_genetic:
        rows = genotypes.matrix[
            [cohort.genotype_row[sid] for sid in plan.training_ids], :
        ]
        ids = [GENETIC_PREFIX + fid for fid in genotypes.feature_ids]
        selector = SubBaggedFrequencySelector(
            method="fisher" if config.selector == "fisher_ttest" else "lasso",
            k=config.k_per_modality,
            seed=stage_seed(config.seed, "select_genetic", repeat),
            genetic=True,
            modality="genetic",
        )
        selector.fit(rows, _plan_labels(plan), feature_ids=ids, plan=plan)
        sets["genetic"] = selector.feature_set_
        selections["genetic"] = selector.per_subset_selections_

    if need_mri:
        rows = wscores.values[wscores.rows_for(plan.training_ids), :]
        ids = [MRI_PREFIX + name for name in wscores.roi_names]
        selector = SubBaggedFrequencySelector(
            method="welch" if config.selector == "fisher_ttest" else "lasso",
            k=config.k_per_modality,
            seed=stage_seed(config.seed, "select_mri", repeat),
            genetic=False,
            modality="mri",
        )
        selector.fit(rows, _plan_labels(plan), feature_ids=ids, plan=plan)
        sets["mri"] = selector.feature_set_
        selections["mri"] = selector.per_subset_selections_

    if "combined" in config.modalities:
        sets["combined"] = combine_modalities(sets["genetic"], sets["mri"])

    if persist:
        inter = _intermediate_dir(config)
        _write_text(inter / "subbag_plan.json", plan.to_json())
        for modality, feature_set in sets.items():
            _write_text(inter / f"features_{modality}.json", feature_set.to_json())
        _write_text(
            inter / "per_subset_selections.json",
            json.dumps(
                {k: [list(s) for s in v] for k, v in selections.items()},
                sort_keys=True,
                indent=2,
            ),
        )
    return sets


def _plan_labels(plan: SubBagPlan) -> np.ndarray:
    class_a = set(plan.class_a_ids)
    return np.array([-1.0 if sid in class_a else 1.0 for sid in plan.training_ids])


def build_feature_matrix(
    feature_set: FeatureSet,
    genotypes: Optional[RecodedGenotypes],
    wscores: Optional[WScoreTable],
    subject_ids: Sequence[str],
) -> FeatureMatrix:
    """Assemble the subjects x selected-features block for one modality.

    Feature ids carry their namespace prefix; genetic columns stay in the
    categorical {-1, 0, 1, 2} coding (imputation happens per ensemble
    member).  Raises when a requested feature cannot be resolved.
    """
    columns = []
    genetic_cols = []
    blocks: dict[str, list[int]] = {}
    geno_index = (
        {fid: j for j, fid in enumerate(genotypes.feature_ids)} if genotypes else {}
    )
    roi_index = {name: j for j, name in enumerate(wscores.roi_names)} if wscores else {}
    geno_rows = (
        {sid: i for i, sid in enumerate(genotypes.sample_ids)} if genotypes else {}
    )
    wscore_rows = (
        {sid: i for i, sid in enumerate(wscores.subject_ids)} if wscores else {}
    )
    missing_features = []
    for k, feature in enumerate(feature_set.features):
        fid = feature.feature_id
        if fid.startswith(GENETIC_PREFIX) and fid[len(GENETIC_PREFIX):] in geno_index:
            j = geno_index[fid[len(GENETIC_PREFIX):]]
            column = np.array(
                [
                    float(genotypes.matrix[geno_rows[sid], j])
                    if sid in geno_rows
                    else np.nan
                    for sid in subject_ids
                ]
            )
            genetic_cols.append(k)
            blocks.setdefault("genetic", []).append(k)
        elif fid.startswith(MRI_PREFIX) and fid[len(MRI_PREFIX):] in roi_index:
            j = roi_index[fid[len(MRI_PREFIX):]]
            column = np.array(
                [
                    wscores.values[wscore_rows[sid], j] if sid in wscore_rows else np.nan
                    for sid in subject_ids
                ]
            )
            blocks.setdefault("mri", []).append(k)
        else:
            missing_features.append(fid)
            continue
        columns.append(column)
    if missing_features:
        raise ValidationError(
            "features not resolvable in the supplied data: "
            + ", ".join(missing_features[:10])
        )
    values = np.column_stack(columns) if columns else np.zeros((len(subject_ids), 0))
    incomplete = [
        sid for i, sid in enumerate(subject_ids) if np.isnan(values[i]).any()
    ]
    if incomplete:
        raise ValidationError(
            "subjects lack a modality required by the feature set: "
            + ", ".join(incomplete[:10])
        )
    return FeatureMatrix(
        subject_ids=tuple(subject_ids),
        feature_ids=tuple(feature_set.feature_ids),
        values=values,
        blocks={k: tuple(v) for k, v in blocks.items()},
        genetic_columns=tuple(genetic_cols),
    )


def _modality_subjects(
    modality: str, cohort: Cohort, subject_ids: Sequence[str]
) -> tuple[list[str], list[str]]:
    """Split ids into (scorable, skipped) for a modality's requirements."""
    needs = {
        "genetic": ("genotype",),
        "mri": ("mri",),
        "combined": ("genotype", "mri"),
    }[modality]
    scorable, skipped = [], []
    by_id = {s.subject_id: s for s in cohort.subjects}
    for sid in subject_ids:
        subject = by_id.get(sid)
        if subject is None or any(m in subject.missing_modalities for m in needs):
            skipped.append(sid)
        else:
            scorable.append(sid)
    return scorable, skipped


def stage_train(
    config: PipelineConfig, repeat: int = 0, persist: bool = True
) -> dict[str, EnsembleModel]:
    """Train one sub-bagged ensemble per requested modality."""
    genotypes = load_qc_genotypes(config)
    wscores = read_wscores(_intermediate_dir(config) / "wscores.csv")
    inter = _intermediate_dir(config)
    plan = SubBagPlan.from_json((inter / "subbag_plan.json").read_text())
    models = {}
    for modality in config.modalities:
        feature_set = FeatureSet.from_json(
            (inter / f"features_{modality}.json").read_text()
        )
        data = build_feature_matrix(
            feature_set, genotypes, wscores, plan.training_ids
        )
        models[modality] = train_ensemble(
            data, feature_set, plan, config.mkl, modality
        )
        if persist:
            _write_text(
                Path(config.paths.outdir) / f"model_{modality}.json",
                models[modality].to_json(),
            )
    return models


def stage_evaluate(
    config: PipelineConfig,
    models: Optional[dict[str, EnsembleModel]] = None,
    persist: bool = True,
) -> dict:
    """Score training (out-of-bag) and unseen strata; emit the report bundle."""
    genotypes = load_qc_genotypes(config)
    wscores = read_wscores(_intermediate_dir(config) / "wscores.csv")
    cohort = _assemble_cohort(config, genotypes, wscores)
    strata = {s.subject_id: s.label.stratum for s in cohort.subjects}
    if models is None:
        models = {}
        for modality in config.modalities:
            path = Path(config.paths.outdir) / f"model_{modality}.json"
            models[modality] = EnsembleModel.from_json(path.read_text())

    results = {}
    for modality, model in models.items():
        train_scorable, train_skipped = _modality_subjects(
            modality, cohort, model.plan.training_ids
        )
        data_train = build_feature_matrix(
            model.feature_set, genotypes, wscores, train_scorable
        )
        oob = score_oob(model, data_train, strata, config.threshold)

        unseen_ids = [
            s.subject_id
            for s in cohort.subjects
            if s.label.stratum not in TRAINING_STRATA
        ]
        unseen_scorable, unseen_skipped = _modality_subjects(
            modality, cohort, unseen_ids
        )
        data_unseen = build_feature_matrix(
            model.feature_set, genotypes, wscores, unseen_scorable
        )
        unseen = score_unseen(model, data_unseen, unseen_scorable, strata, config.threshold)
        results[modality] = {
            "oob": oob,
            "unseen": unseen,
            "train_metrics": confusion_metrics(oob),
            "test_metrics": confusion_metrics(unseen),
            "skipped": sorted(set(train_skipped) | set(unseen_skipped)),
        }
    if persist:
        emit_report(config, results)
    return results


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _paired_tests(results: dict) -> dict:
    """Eq-style one-sided paired comparisons per stratum and modality pair.

    The tiny early-DAT stratum is scored and reported but excluded from
    significance testing.
    """
    out: dict = {}
    modalities = sorted(results)
    tables: dict[str, dict[str, float]] = {}
    stratum_of: dict[str, str] = {}
    for modality in modalities:
        scores = {}
        for table in (results[modality]["oob"], results[modality]["unseen"]):
            for row in table.rows:
                scores[row.subject_id] = row.score
                stratum_of[row.subject_id] = row.stratum
        tables[modality] = scores
    for stratum in STRATA:
        if stratum == "eDAT":
            continue
        subject_ids = sorted(
            sid for sid, s in stratum_of.items() if s == stratum
        )
        cell: dict = {}
        for i, mod_a in enumerate(modalities):
            for mod_b in modalities[i + 1 :]:
                common = [
                    sid
                    for sid in subject_ids
                    if sid in tables[mod_a] and sid in tables[mod_b]
                ]
                key = f"{mod_a}_vs_{mod_b}"
                if len(common) < 2:
                    cell[key] = None
                    continue
                a = [tables[mod_a][sid] for sid in common]
                b = [tables[mod_b][sid] for sid in common]
                try:
                    res = paired_one_sided_t(a, b)
                    cell[key] = {
                        "t_statistic": res.t_statistic,
                        "df": res.df,
                        "p_one_sided": res.p_one_sided,
                        "mean_diff": res.mean_diff,
                        "n": res.n,
                        "variant": res.variant,
                    }
                except ValidationError:
                    cell[key] = None
        if cell:
            out[stratum] = cell
    return out


def emit_report(config: PipelineConfig, results: dict) -> Path:
    """Write the deterministic report bundle under <outdir>/report."""
    report_dir = Path(config.paths.outdir) / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    inter = _intermediate_dir(config)

    emitted = []
    for modality, payload in sorted(results.items()):
        scores_path = report_dir / f"scores_{modality}.csv"
        merged = DatScoreTable(
            modality=modality,
            threshold=config.threshold,
            rows=payload["oob"].rows + payload["unseen"].rows,
            unscorable=payload["oob"].unscorable,
        )
        merged.to_csv(scores_path)
        emitted.append(scores_path)

    selections_path = inter / "per_subset_selections.json"
    if selections_path.exists():
        selections = json.loads(selections_path.read_text())
        for modality, per_subset in sorted(selections.items()):
            freq_path = report_dir / f"selection_frequency_{modality}.csv"
            counts: dict[str, int] = {}
            for subset in per_subset:
                for fid in set(subset):
                    counts[fid] = counts.get(fid, 0) + 1
            f_total = max(len(per_subset), 1)
            with open(freq_path, "w", newline="", encoding="utf-8") as fh:
                fh.write("feature_id,selection_count,selection_frequency\n")
                for fid, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
                    fh.write(f"{fid},{count},{repr(count / f_total)}\n")
            emitted.append(freq_path)

    summary = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "selector": config.selector,
        "threshold": config.threshold,
        "modalities": {
            modality: {
                "train": payload["train_metrics"].to_dict(),
                "test": payload["test_metrics"].to_dict(),
                "unscorable": payload["oob"].unscorable,
                "skipped_missing_modality": payload["skipped"],
            }
            for modality, payload in sorted(results.items())
        },
        "paired_tests": _paired_tests(results),
    }
    summary_path = report_dir / "metrics_summary.json"
    _write_text(summary_path, json.dumps(summary, sort_keys=True, indent=2))
    emitted.append(summary_path)

    manifest = {
        "artifacts": {
            p.name: sha256_file(p) for p in sorted(emitted, key=lambda p: p.name)
        }
    }
    _write_text(
        report_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2)
    )
    return report_dir


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


def run_pipeline(config: PipelineConfig) -> dict:
    """QC through report; returns the evaluate-stage results."""
    timings = {}
    t0 = time.perf_counter()
    stage_qc(config)
    timings["qc"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stage_wscore(config)
    timings["wscore"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stage_select(config)
    timings["select"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    models = stage_train(config)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    results = stage_evaluate(config, models)
    timings["evaluate"] = time.perf_counter() - t0

    if config.repeats > 1:
        _append_repeat_summary(config)
    write_run_manifest(config, timings)
    return results


def run_fixed_features(config: PipelineConfig, feature_list_path) -> dict:
    """Skip selection: train and score on a user-supplied feature list."""
    timings = {}
    t0 = time.perf_counter()
    stage_qc(config)
    stage_wscore(config)
    timings["ingest"] = time.perf_counter() - t0

    genotypes = load_qc_genotypes(config)
    wscores = read_wscores(_intermediate_dir(config) / "wscores.csv")
    cohort = _assemble_cohort(config, genotypes, wscores)
    plan = _plan_from_cohort(config, cohort)
    feature_set = load_fixed_features(feature_list_path, genotypes, wscores)

    inter = _intermediate_dir(config)
    _write_text(inter / "subbag_plan.json", plan.to_json())
    _write_text(inter / f"features_{feature_set.modality}.json", feature_set.to_json())

    config_fixed = PipelineConfig.from_dict(config.to_dict())
    config_fixed.modalities = (feature_set.modality,)

    t0 = time.perf_counter()
    models = stage_train(config_fixed)
    results = stage_evaluate(config_fixed, models)
    timings["train_evaluate"] = time.perf_counter() - t0
    write_run_manifest(config_fixed, timings)
    return results


def load_fixed_features(
    path, genotypes: Optional[RecodedGenotypes], wscores: Optional[WScoreTable]
) -> FeatureSet:
    """Parse a fixed feature list (JSON FeatureSet, JSON id list, or lines).

    Bare ids are resolved against the genotype then ROI spaces; ids that
    resolve nowhere raise an error naming them.  The resulting modality is
    genetic / mri when the list is pure, combined when mixed.
    """
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        raise ValidationError(f"{path}: empty feature list")
    ids: list[str]
    frequencies = {}
    try:
        data = json.loads(text)
        if isinstance(data, dict) and "features" in data:
            loaded = FeatureSet.from_json(text)
            ids = loaded.feature_ids
            frequencies = {
                f.feature_id: f.selection_frequency for f in loaded.features
            }
        elif isinstance(data, list):
            ids = [str(x) for x in data]
        else:
            raise ValidationError(f"{path}: unsupported feature list structure")
    except json.JSONDecodeError:
        ids = [line.strip() for line in text.splitlines() if line.strip()]
    if not ids:
        raise ValidationError(f"{path}: empty feature list")

    geno_ids = set(genotypes.feature_ids) if genotypes else set()
    roi_ids = set(wscores.roi_names) if wscores else set()
    resolved = []
    unresolved = []
    for fid in ids:
        if fid.startswith(GENETIC_PREFIX) and fid[len(GENETIC_PREFIX):] in geno_ids:
            resolved.append((fid, "genetic"))
        elif fid.startswith(MRI_PREFIX) and fid[len(MRI_PREFIX):] in roi_ids:
            resolved.append((fid, "mri"))
        elif fid in geno_ids:
            resolved.append((GENETIC_PREFIX + fid, "genetic"))
        elif fid in roi_ids:
            resolved.append((MRI_PREFIX + fid, "mri"))
        else:
            unresolved.append(fid)
    if unresolved:
        raise ValidationError(
            "feature ids not present in the data: " + ", ".join(unresolved[:10])
        )
    kinds = {kind for _, kind in resolved}
    modality = kinds.pop() if len(kinds) == 1 else "combined"
    features = [
        FeatureSelection(fid, frequencies.get(fid, 1.0), kind)
        for fid, kind in resolved
    ]
    return FeatureSet(modality=modality, features=features, k=len(features))


def _append_repeat_summary(config: PipelineConfig) -> None:
    """Re-run plan/select/train/score with derived seeds; summarize spread."""
    metrics = ("auc", "sensitivity", "specificity", "balanced_accuracy", "accuracy")
    collected: dict = {m: {"train": {k: [] for k in metrics}, "test": {k: [] for k in metrics}} for m in config.modalities}
    for repeat in range(config.repeats):
        stage_select(config, repeat=repeat, persist=True)
        models = stage_train(config, repeat=repeat, persist=False)
        results = stage_evaluate(config, models, persist=False)
        for modality, payload in results.items():
            for phase, report in (
                ("train", payload["train_metrics"]),
                ("test", payload["test_metrics"]),
            ):
                report_dict = report.to_dict()
                for metric in metrics:
                    value = report_dict.get(metric)
                    if value is not None:
                        collected[modality][phase][metric].append(value)
    summary_path = Path(config.paths.outdir) / "report" / "metrics_summary.json"
    summary = json.loads(summary_path.read_text())
    summary["repeats"] = {
        "n": config.repeats,
        "provenance": "sd across full selection+training repetitions with derived seeds",
        "grid": {
            modality: {
                phase: {
                    metric: (
                        {
                            "mean": float(np.mean(values)),
                            "sd": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                        }
                        if values
                        else None
                    )
                    for metric, values in phases.items()
                }
                for phase, phases in per_modality.items()
            }
            for modality, per_modality in collected.items()
        },
    }
    _write_text(summary_path, json.dumps(summary, sort_keys=True, indent=2))
    # manifest must reflect the rewritten summary
    report_dir = summary_path.parent
    manifest_path = report_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["artifacts"]["metrics_summary.json"] = sha256_file(summary_path)
    _write_text(manifest_path, json.dumps(manifest, sort_keys=True, indent=2))
    # restore the seed-0 intermediates so resumed stages match the base run
    stage_select(config, repeat=0, persist=True)


def write_run_manifest(config: PipelineConfig, timings: dict) -> Path:
    """Run provenance (outside the deterministic report bundle)."""
    import scipy

    outdir = Path(config.paths.outdir)
    inputs = {}
    for name in ("bed", "bim", "fam", "volumes", "timelines", "covariates", "apoe"):
        path = Path(getattr(config.paths, name))
        if path.exists():
            inputs[name] = sha256_file(path)
    artifacts = {}
    for path in sorted(outdir.rglob("*")):
        if path.is_file() and path.name != "run_manifest.json":
            artifacts[str(path.relative_to(outdir))] = sha256_file(path)
    manifest = {
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "inputs": inputs,
        "artifacts": artifacts,
        "wall_clock_seconds": {k: round(v, 3) for k, v in timings.items()},
        "versions": {
            "datscore": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    path = outdir / "run_manifest.json"
    _write_text(path, json.dumps(manifest, sort_keys=True, indent=2))
    return path


def score_new_subjects(
    model_path,
    genotypes: Optional[RecodedGenotypes],
    wscores: Optional[WScoreTable],
    threshold: float = 0.5,
) -> DatScoreTable:
    """Deployment-style scoring: no diagnosis input, all members used.

    Subjects that were in the model's training classes are scored too but
    trigger a warning, since this path does not apply out-of-bag masking.
    """
    model = EnsembleModel.from_json(Path(model_path).read_text(encoding="utf-8"))
    subject_ids: list[str] = []
    if genotypes is not None:
        subject_ids = list(genotypes.sample_ids)
    if wscores is not None:
        scored = [
            s for s in wscores.subject_ids if s not in set(wscores.flagged_missing)
        ]
        subject_ids = (
            [sid for sid in subject_ids if sid in set(scored)] if subject_ids else scored
        )
    if not subject_ids:
        return DatScoreTable(modality=model.modality, threshold=threshold)
    data = build_feature_matrix(model.feature_set, genotypes, wscores, subject_ids)
    return score_all_members(model, data, subject_ids, {}, threshold)
