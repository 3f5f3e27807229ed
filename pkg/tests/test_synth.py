"""Synthetic cohort generator: planted structure and determinism."""

import numpy as np
import pytest

from datscore.cohort import stratify
from datscore.errors import ValidationError
from datscore.featsel import FeatureSelection, FeatureSet
from datscore.plink import recode_minor_allele
from datscore.qc import hwe_exact_test
from datscore.synth import (
    DEFAULT_ROI_NAMES,
    GroundTruth,
    SynthConfig,
    DEFAULT_GROUP_SIZES,
    describe_truth,
    generate,
    recovery_of_rois,
    stratum_table,
)

SMALL_SIZES = {"sNC": 20, "uNC": 4, "pNC": 3, "sMCI": 10, "pMCI": 12, "eDAT": 2, "sDAT": 25}


def small_config(**overrides):
    params = dict(
        group_sizes=dict(SMALL_SIZES),
        n_snps=120,
        n_causal_snps=4,
        causal_or=3.0,
        n_rois=20,
        seed=5,
    )
    params.update(overrides)
    return SynthConfig(**params)


def test_default_group_sizes_match_published_cohort():
    config = SynthConfig()
    assert config.group_sizes == DEFAULT_GROUP_SIZES
    assert sum(config.group_sizes.values()) == 543


def test_roi_name_catalogue_has_91_entries():
    assert len(DEFAULT_ROI_NAMES) == 91
    assert len(set(DEFAULT_ROI_NAMES)) == 91


def test_generated_strata_roundtrip():
    dataset = generate(small_config())
    requested = dict(SMALL_SIZES)
    observed = {}
    for timeline in dataset.timelines:
        stratum = stratify(timeline).stratum
        observed[stratum] = observed.get(stratum, 0) + 1
    assert observed == requested


def test_fixed_seed_identical_files(tmp_path):
    d1 = generate(small_config())
    d2 = generate(small_config())
    p1 = d1.write(tmp_path / "a")
    p2 = d2.write(tmp_path / "b")
    for key in p1:
        b1 = open(p1[key], "rb").read()
        b2 = open(p2[key], "rb").read()
        assert b1 == b2, key


def test_different_seed_differs(tmp_path):
    d1 = generate(small_config(seed=5))
    d2 = generate(small_config(seed=6))
    assert d1.genotypes.calls != d2.genotypes.calls


def test_volumes_positive_and_shaped():
    dataset = generate(small_config())
    assert dataset.volumes.values.shape == (sum(SMALL_SIZES.values()), 20)
    assert (dataset.volumes.values > 0).all()


def test_latent_risk_recorded_for_everyone():
    dataset = generate(small_config())
    assert set(dataset.ground_truth.latent_risk) == {
        t.subject_id for t in dataset.timelines
    }
    risks = np.array(list(dataset.ground_truth.latent_risk.values()))
    assert (0 < risks).all() and (risks < 1).all()


def test_noncausal_snps_respect_hwe():
    """Generated non-causal SNPs pass the exact test at alpha 1e-6."""
    config = small_config(n_snps=2000, n_causal_snps=0, group_sizes={"sNC": 150, "sDAT": 150})
    dataset = generate(config)
    recoded = recode_minor_allele(dataset.genotypes)
    failures = 0
    for j in range(recoded.n_features):
        col = recoded.matrix[:, j]
        p = hwe_exact_test(
            int((col == 0).sum()), int((col == 1).sum()), int((col == 2).sum())
        )
        if p < 1e-6:
            failures += 1
    assert failures <= max(1, int(0.001 * recoded.n_features))


def test_causal_genotype_distributions_shift():
    config = small_config(group_sizes={"sNC": 200, "sDAT": 200}, causal_or=3.0)
    dataset = generate(config)
    strata = stratum_table(dataset)
    recoded = recode_minor_allele(dataset.genotypes)
    rows = {sid: i for i, sid in enumerate(recoded.sample_ids)}
    fid = {f: j for j, f in enumerate(recoded.feature_ids)}
    risk_rows = [rows[s] for s, st in strata.items() if st == "sDAT"]
    safe_rows = [rows[s] for s, st in strata.items() if st == "sNC"]
    shifts = []
    for snp in dataset.ground_truth.causal_snp_ids:
        col = recoded.matrix[:, fid[snp]]
        shifts.append(col[risk_rows].mean() - col[safe_rows].mean())
    assert np.mean(np.abs(shifts)) > 0.3


def test_null_config_has_no_association():
    config = small_config(
        group_sizes={"sNC": 200, "sDAT": 200}, causal_or=1.0, atrophy_effect=0.0
    )
    dataset = generate(config)
    strata = stratum_table(dataset)
    recoded = recode_minor_allele(dataset.genotypes)
    rows = {sid: i for i, sid in enumerate(recoded.sample_ids)}
    fid = {f: j for j, f in enumerate(recoded.feature_ids)}
    risk_rows = [rows[s] for s, st in strata.items() if st == "sDAT"]
    safe_rows = [rows[s] for s, st in strata.items() if st == "sNC"]
    shifts = [
        recoded.matrix[risk_rows, fid[s]].mean() - recoded.matrix[safe_rows, fid[s]].mean()
        for s in dataset.ground_truth.causal_snp_ids
    ]
    assert np.mean(np.abs(shifts)) < 0.15
    # APOE carrier rates match across classes too
    e4_risk = np.mean([dataset.apoe[sid][2] for sid, st in strata.items() if st == "sDAT"])
    e4_safe = np.mean([dataset.apoe[sid][2] for sid, st in strata.items() if st == "sNC"])
    assert abs(e4_risk - e4_safe) < 0.12


def test_atrophy_planted_only_in_established_strata():
    config = small_config(
        group_sizes={"sNC": 120, "pNC": 40, "sMCI": 40, "sDAT": 120},
        atrophy_effect=2.0,
        noise_sd=100.0,
        n_rois=30,
    )
    dataset = generate(config)
    strata = stratum_table(dataset)
    affected = [
        dataset.volumes.roi_names.index(r)
        for r in dataset.ground_truth.affected_roi_ids
    ]
    rows = {sid: i for i, sid in enumerate(dataset.volumes.subject_ids)}

    def group_mean(stratum):
        idx = [rows[s] for s, st in strata.items() if st == stratum]
        return dataset.volumes.values[np.ix_(idx, affected)].mean()

    snc, sdat = group_mean("sNC"), group_mean("sDAT")
    pnc, smci = group_mean("pNC"), group_mean("sMCI")
    assert snc - sdat > 100.0  # atrophy shows up in sDAT
    assert abs(snc - pnc) < 100.0  # pNC volumes stay healthy
    assert abs(snc - smci) < 100.0  # sMCI volumes stay healthy


def test_describe_truth_arithmetic():
    gt = GroundTruth(
        causal_snp_ids=tuple(f"rs{i}" for i in range(10)),
        affected_roi_ids=("L_Hippocampus",),
        latent_risk={},
        apoe_odds_ratio=3.0,
    )
    chosen = [FeatureSelection(f"snp:rs{i}", 1.0, "genetic") for i in range(8)]
    chosen += [FeatureSelection(f"snp:other{i}", 1.0, "genetic") for i in range(9)]
    fs = FeatureSet("genetic", chosen, 17)
    report = describe_truth(gt, fs)
    assert report["recall"] == 0.8
    assert report["precision"] == pytest.approx(8 / 17)
    assert not report["degenerate"]


def test_describe_truth_exact_and_disjoint():
    gt = GroundTruth(("rs1",), (), {}, 1.0)
    exact = FeatureSet("genetic", [FeatureSelection("snp:rs1", 1.0, "genetic")], 1)
    assert describe_truth(gt, exact)["recall"] == 1.0
    assert describe_truth(gt, exact)["precision"] == 1.0
    disjoint = FeatureSet("genetic", [FeatureSelection("snp:rsX", 1.0, "genetic")], 1)
    report = describe_truth(gt, disjoint)
    assert report["recall"] == 0.0 and report["precision"] == 0.0


def test_roi_recovery_report():
    gt = GroundTruth((), ("L_Hippocampus", "R_Amygdala"), {}, 1.0)
    fs = FeatureSet("mri", [FeatureSelection("roi:L_Hippocampus", 1.0, "mri")], 1)
    report = recovery_of_rois(gt, fs)
    assert report["recall"] == 0.5


def test_config_validation():
    with pytest.raises(ValidationError, match="unknown strata"):
        SynthConfig(group_sizes={"XX": 5})
    with pytest.raises(ValidationError, match="causal"):
        SynthConfig(n_snps=5, n_causal_snps=10)
    with pytest.raises(ValidationError, match="maf_range"):
        SynthConfig(maf_range=(0.0, 0.6))
    with pytest.raises(ValidationError):
        SynthConfig(group_sizes={"sNC": -1})


def test_ground_truth_json_roundtrip():
    dataset = generate(small_config())
    again = GroundTruth.from_json(dataset.ground_truth.to_json())
    assert again == dataset.ground_truth
