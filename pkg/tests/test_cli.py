"""CLI subcommands, exit codes, and pipeline-level behaviours."""

import json
from pathlib import Path

import pytest

from datscore.cli import main
from datscore.pipeline import PipelineConfig

TINY_SIZES = {"sNC": 16, "uNC": 3, "pNC": 3, "sMCI": 8, "pMCI": 8, "eDAT": 2, "sDAT": 18}


def tiny_config_dict(base: Path, seed=3):
    return {
        "paths": {
            "bed": str(base / "data/s.bed"),
            "bim": str(base / "data/s.bim"),
            "fam": str(base / "data/s.fam"),
            "volumes": str(base / "data/volumes.csv"),
            "timelines": str(base / "data/timelines.csv"),
            "covariates": str(base / "data/covariates.csv"),
            "apoe": str(base / "data/apoe.csv"),
            "outdir": str(base / "out"),
        },
        "synth": {
            "group_sizes": dict(TINY_SIZES),
            "n_snps": 150,
            "n_causal_snps": 4,
            "causal_or": 3.5,
            "n_rois": 12,
            "seed": seed,
        },
        "subbag": {"f": 4, "ratio": 0.8},
        "k_per_modality": 5,
        "mkl": {"max_iters": 60},
        "seed": seed,
    }


def write_config(base: Path, **overrides) -> Path:
    data = tiny_config_dict(base)
    data.update(overrides)
    path = base / "config.json"
    path.write_text(json.dumps(data, indent=2))
    return path


@pytest.fixture
def prepared(tmp_path):
    config_path = write_config(tmp_path)
    assert main(["simulate", "--config", str(config_path)]) == 0
    return tmp_path, config_path


def test_config_init_writes_defaults(tmp_path):
    out = tmp_path / "cfg.json"
    assert main(["config", "init", "--output", str(out)]) == 0
    config = PipelineConfig.from_json_file(out)
    assert config.k_per_modality == 17
    assert config.subbag.f == 10 and config.subbag.ratio == 0.8
    assert config.threshold == 0.5
    assert config.synth.group_sizes["sNC"] == 109


def test_simulate_writes_inputs_and_manifest(prepared):
    base, _ = prepared
    for name in ("s.bed", "s.bim", "s.fam", "volumes.csv", "timelines.csv",
                 "covariates.csv", "apoe.csv", "ground_truth.json"):
        assert (base / "data" / name).exists()
    manifest = json.loads((base / "out/run_manifest.json").read_text())
    assert "config_hash" in manifest and "inputs" in manifest


def test_full_run_emits_report_bundle(prepared):
    base, config_path = prepared
    assert main(["run", "--config", str(config_path)]) == 0
    report = base / "out/report"
    for name in (
        "scores_genetic.csv",
        "scores_mri.csv",
        "scores_combined.csv",
        "selection_frequency_genetic.csv",
        "selection_frequency_mri.csv",
        "metrics_summary.json",
        "manifest.json",
    ):
        assert (report / name).exists(), name
    summary = json.loads((report / "metrics_summary.json").read_text())
    assert set(summary["modalities"]) == {"genetic", "mri", "combined"}
    metric_names = {"sensitivity", "specificity", "accuracy", "balanced_accuracy", "auc"}
    for modality in summary["modalities"].values():
        # the 3 modalities x {train, test} x 5 metrics grid
        assert set(modality["train"]) >= metric_names
        assert set(modality["test"]) >= metric_names
        assert set(modality["test"]["per_stratum_accuracy"]) == {
            "sNC", "uNC", "pNC", "sMCI", "pMCI", "eDAT", "sDAT",
        }
    assert "paired_tests" in summary
    assert "eDAT" not in summary["paired_tests"]
    manifest = json.loads((report / "manifest.json").read_text())
    assert set(manifest["artifacts"]) >= {"metrics_summary.json", "scores_mri.csv"}


def test_stagewise_equals_full_run(prepared, tmp_path):
    """Resume-from-intermediates reproduces a fresh run's bundle."""
    base, config_path = prepared
    assert main(["run", "--config", str(config_path)]) == 0
    fresh = {
        p.name: p.read_bytes() for p in (base / "out/report").iterdir()
    }
    # wipe outputs, then drive the stages one subcommand at a time
    import shutil

    shutil.rmtree(base / "out")
    for command in ("qc", "wscore", "select", "train", "evaluate"):
        assert main([command, "--config", str(config_path)]) == 0, command
    staged = {p.name: p.read_bytes() for p in (base / "out/report").iterdir()}
    assert staged == fresh


def test_rerun_is_byte_identical(prepared):
    base, config_path = prepared
    assert main(["run", "--config", str(config_path)]) == 0
    first = {p.name: p.read_bytes() for p in (base / "out/report").iterdir()}
    manifest1 = json.loads((base / "out/run_manifest.json").read_text())
    assert main(["run", "--config", str(config_path)]) == 0
    second = {p.name: p.read_bytes() for p in (base / "out/report").iterdir()}
    manifest2 = json.loads((base / "out/run_manifest.json").read_text())
    assert first == second
    # every artifact digest (models and intermediates included) reproduces
    assert manifest1["artifacts"] == manifest2["artifacts"]
    assert manifest1["config_hash"] == manifest2["config_hash"]


def test_score_subcommand_roundtrip(prepared):
    base, config_path = prepared
    assert main(["run", "--config", str(config_path)]) == 0
    out = base / "rescored.csv"
    with pytest.warns(UserWarning, match="training classes"):
        code = main(
            [
                "score",
                "--model", str(base / "out/model_mri.json"),
                "--wscores", str(base / "out/intermediate/wscores.csv"),
                "--out", str(out),
            ]
        )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "subject_id,stratum,modality,score,predicted"
    assert len(lines) == sum(TINY_SIZES.values()) + 1


def test_score_requires_model_inputs(prepared):
    base, _ = prepared
    code = main(["score", "--model", str(base / "out/model_mri.json"), "--out", "x.csv"])
    assert code == 1  # no genotype or w-score inputs


def test_fixed_features_bypass_equivalence(prepared):
    """Feeding a prior run's feature set reproduces its scoring outputs."""
    base, config_path = prepared
    assert main(["run", "--config", str(config_path)]) == 0
    fs_path = base / "out/intermediate/features_combined.json"
    baseline = (base / "out/report/scores_combined.csv").read_bytes()
    fixed_base = base / "fixed"
    fixed_config = write_config(base)  # same inputs, fresh outdir below
    data = json.loads(fixed_config.read_text())
    data["paths"]["outdir"] = str(fixed_base)
    fixed_config.write_text(json.dumps(data))
    assert main(["run", "--config", str(fixed_config), "--fixed-features", str(fs_path)]) == 0
    assert (fixed_base / "report/scores_combined.csv").read_bytes() == baseline


def test_fixed_features_snp_panel_gives_genetic_only(prepared):
    base, config_path = prepared
    assert main(["run", "--config", str(config_path)]) == 0
    geno = json.loads((base / "data/ground_truth.json").read_text())
    panel = base / "panel.txt"
    panel.write_text("\n".join(geno["causal_snp_ids"]) + "\n")
    outdir = base / "panel_out"
    data = json.loads(config_path.read_text())
    data["paths"]["outdir"] = str(outdir)
    config2 = base / "config_panel.json"
    config2.write_text(json.dumps(data))
    assert main(["run", "--config", str(config2), "--fixed-features", str(panel)]) == 0
    assert (outdir / "report/scores_genetic.csv").exists()
    assert not (outdir / "report/scores_mri.csv").exists()


def test_fixed_features_unresolvable_ids_error(prepared, capsys):
    base, config_path = prepared
    assert main(["run", "--config", str(config_path)]) == 0
    panel = base / "bad_panel.txt"
    panel.write_text("rs_does_not_exist\n")
    code = main(["run", "--config", str(config_path), "--fixed-features", str(panel)])
    assert code == 1
    assert "rs_does_not_exist" in capsys.readouterr().err


def test_fixed_features_empty_list_error(prepared):
    base, config_path = prepared
    panel = base / "empty.txt"
    panel.write_text("\n")
    assert main(["run", "--config", str(config_path), "--fixed-features", str(panel)]) == 1


def test_missing_input_exits_io(tmp_path):
    config_path = write_config(tmp_path)  # no simulate: inputs absent
    assert main(["qc", "--config", str(config_path)]) == 2


def test_invalid_config_exits_validation(tmp_path):
    path = tmp_path / "bad.json"
    payload = tiny_config_dict(tmp_path)
    payload["selector"] = "magic"
    path.write_text(json.dumps(payload))
    assert main(["run", "--config", str(path)]) == 1


def test_unparseable_config_exits_io(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", "--config", str(path)]) == 2


def test_unknown_subcommand_exits_validation(capsys):
    assert main(["frobnicate"]) == 1


def test_seed_override_changes_outputs(prepared):
    base, config_path = prepared
    assert main(["run", "--config", str(config_path)]) == 0
    first = (base / "out/report/scores_combined.csv").read_bytes()
    assert main(["run", "--config", str(config_path), "--seed", "99"]) == 0
    second = (base / "out/report/scores_combined.csv").read_bytes()
    assert first != second


def test_single_modality_run(prepared):
    base, config_path = prepared
    data = json.loads(config_path.read_text())
    data["modalities"] = ["mri"]
    data["paths"]["outdir"] = str(base / "out_mri")
    config2 = base / "config_mri.json"
    config2.write_text(json.dumps(data))
    assert main(["run", "--config", str(config2)]) == 0
    report = base / "out_mri/report"
    summary = json.loads((report / "metrics_summary.json").read_text())
    assert set(summary["modalities"]) == {"mri"}
    assert summary["paired_tests"] == {}  # nothing to pair against
    assert (report / "scores_mri.csv").exists()
    assert not (report / "scores_genetic.csv").exists()


def test_lasso_selector_swaps_method_only(prepared):
    base, config_path = prepared
    data = json.loads(config_path.read_text())
    data["selector"] = "lasso"
    data["paths"]["outdir"] = str(base / "out_lasso")
    config2 = base / "config_lasso.json"
    config2.write_text(json.dumps(data))
    assert main(["run", "--config", str(config2)]) == 0
    summary = json.loads((base / "out_lasso/report/metrics_summary.json").read_text())
    assert summary["selector"] == "lasso"
    assert set(summary["modalities"]) == {"genetic", "mri", "combined"}
