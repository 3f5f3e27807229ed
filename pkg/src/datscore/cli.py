"""Subcommand-driven pipeline driver.

Subcommands: simulate | qc | wscore | select | train | score | evaluate |
run | config init.  Exit codes: 0 ok, 1 validation, 2 I/O, 3 numerical
failure.  All randomness flows from the single seed in the config file
(overridable with --seed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DataFormatError, NumericalError, ValidationError
from .harmonize import read_wscores
from .pipeline import (
    PipelineConfig,
    run_fixed_features,
    run_pipeline,
    score_new_subjects,
    stage_evaluate,
    stage_qc,
    stage_select,
    stage_simulate,
    stage_train,
    stage_wscore,
    write_run_manifest,
)
from .plink import append_apoe, read_apoe_table, read_bed_trio, recode_minor_allele

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argument problems are validation failures
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="datscore",
        description="image/genotype dementia-score pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_arg(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--outdir", default=None, help="override output directory")

    for name, text in (
        ("simulate", "generate a synthetic dataset at the configured input paths"),
        ("qc", "genotype ingestion, recoding, APOE merge, and quality control"),
        ("wscore", "fit the harmonization GLM and compute w-scores"),
        ("select", "sub-bagged feature selection per modality"),
        ("train", "train the per-modality classifier ensembles"),
        ("evaluate", "score training (out-of-bag) and unseen strata; emit report"),
        ("run", "full pipeline end to end"),
    ):
        p = sub.add_parser(name, help=text)
        add_config_arg(p)
        if name in ("run", "train"):
            p.add_argument(
                "--fixed-features",
                default=None,
                help="skip selection and use this feature list (JSON or one id per line)",
            )

    p = sub.add_parser("score", help="score new subjects with a trained ensemble")
    p.add_argument("--model", required=True, help="serialized ensemble JSON")
    p.add_argument("--bed", default=None)
    p.add_argument("--bim", default=None)
    p.add_argument("--fam", default=None)
    p.add_argument("--apoe", default=None)
    p.add_argument("--wscores", default=None, help="precomputed w-score CSV")
    p.add_argument("--out", required=True, help="output scores CSV")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("config", help="configuration utilities")
    config_sub = p.add_subparsers(dest="config_command", required=True)
    init = config_sub.add_parser("init", help="write a config with all defaults")
    init.add_argument("--output", default="config.json")

    return parser


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.from_json_file(args.config)
    if args.seed is not None:
        config = PipelineConfig.from_dict({**config.to_dict(), "seed": args.seed})
    if args.outdir is not None:
        data = config.to_dict()
        data["paths"]["outdir"] = args.outdir
        config = PipelineConfig.from_dict(data)
    return config


def _cmd_score(args) -> int:
    genotypes = None
    if args.bed:
        if not (args.bim and args.fam):
            raise ValidationError("--bed requires --bim and --fam")
        matrix = read_bed_trio(args.bed, args.bim, args.fam)
        genotypes = recode_minor_allele(matrix)
        if args.apoe:
            genotypes = append_apoe(genotypes, read_apoe_table(args.apoe))
    wscores = read_wscores(args.wscores) if args.wscores else None
    if genotypes is None and wscores is None:
        raise ValidationError("score needs genotype and/or w-score inputs")
    table = score_new_subjects(args.model, genotypes, wscores, args.threshold)
    table.to_csv(args.out)
    print(f"scored {len(table.rows)} subject(s) -> {args.out}")
    return EXIT_OK


def _cmd_config_init(args) -> int:
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(PipelineConfig().to_json() + "\n", encoding="utf-8")
    print(f"wrote default config -> {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "config":
            return _cmd_config_init(args)
        if args.command == "score":
            return _cmd_score(args)

        config = _load_config(args)
        if args.command == "simulate":
            paths = stage_simulate(config)
            write_run_manifest(config, {})
            print(json.dumps(paths, indent=2, sort_keys=True))
        elif args.command == "qc":
            cleaned = stage_qc(config)
            print(
                f"qc kept {cleaned.n_subjects} subjects x {cleaned.n_features} features"
            )
        elif args.command == "wscore":
            table = stage_wscore(config)
            print(f"w-scores computed for {len(table.subject_ids)} subjects")
        elif args.command == "select":
            sets = stage_select(config)
            for modality, fs in sorted(sets.items()):
                print(f"{modality}: {fs.k} features")
        elif args.command == "train":
            if getattr(args, "fixed_features", None):
                run_fixed_features(config, args.fixed_features)
            else:
                stage_train(config)
            print("ensembles trained")
        elif args.command == "evaluate":
            stage_evaluate(config)
            print(f"report written under {config.paths.outdir}/report")
        elif args.command == "run":
            if getattr(args, "fixed_features", None):
                run_fixed_features(config, args.fixed_features)
            else:
                run_pipeline(config)
            print(f"report written under {config.paths.outdir}/report")
        return EXIT_OK
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
