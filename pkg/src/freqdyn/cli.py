"""Command-line surface: counting, verification, data, training, evaluation.

Every command resolves its configuration from defaults, an optional
sectioned key=value file (--config), and --set section.key=value overrides,
and prints the fully-resolved result before doing work. Output is
deterministic for fixed seeds; wall-clock times appear only on lines
starting with '#'.

Exit codes: 0 success, 1 failed checks or a failed run, 2 usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import load_checkpoint
from .config import (apply_overrides, data_config_from, default_config,
                     eval_config_from, format_config, model_config_from,
                     parse_config_text, postproc_config_from,
                     section_from, train_config_from)
from .dataset import SPLITS, generate_dataset, load_manifest, split_counts
from .errors import CheckpointError, ConfigurationError, TrainingDiverged
from .model import build_model, count_parameters
from .presets import TABLES, format_table, get_preset
from .training import evaluate_model, filter_widths, run_matrix, train
from .verify import SUITE_NAMES, format_results, run_suites

PROG = "freqdyn"


# -- configuration plumbing ----------------------------------------------------

def _load_config(args) -> dict[str, dict[str, object]]:
    """Defaults, then the --config file, then --set overrides."""
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigurationError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read())
    else:
        cfg = default_config()
    apply_overrides(cfg, list(getattr(args, "set", None) or []))
    return cfg


def _load_data(path: str):
    if not os.path.isdir(path):
        raise ConfigurationError(f"dataset directory not found: {path}")
    return load_manifest(path)


def _reconciled_model_config(cfg, manifest):
    """[model] section completed from the dataset where left at defaults."""
    section = dict(cfg["model"])
    data = manifest.config
    if not section["classes"]:
        section["classes"] = data.classes
        section["n_classes"] = len(data.classes)
    if tuple(section["classes"]) != data.classes:
        raise ConfigurationError(
            f"model classes {tuple(section['classes'])} do not match "
            f"dataset classes {data.classes}")
    if section["n_mels"] != data.n_mels:
        raise ConfigurationError(
            f"model n_mels {section['n_mels']} does not match dataset "
            f"n_mels {data.n_mels}")
    return model_config_from(section)


def _print_resolved(cfg) -> None:
    print(format_config(cfg).rstrip("\n"))
    print()


# -- commands -------------------------------------------------------------------

def cmd_count_params(args) -> int:
    chosen = [bool(args.table), bool(args.preset), bool(args.model_config)]
    if sum(chosen) != 1:
        raise ConfigurationError(
            "choose exactly one of --table, --preset, --model-config")
    if args.table:
        print(format_table(args.table))
        return 0
    if args.preset:
        preset = get_preset(args.preset)
        config = preset.config
        print(f"preset {preset.name}: {preset.description}")
    else:
        if not os.path.exists(args.model_config):
            raise ConfigurationError(
                f"config file not found: {args.model_config}")
        with open(args.model_config, encoding="utf-8") as fh:
            config = model_config_from(parse_config_text(fh.read())["model"])
    report = count_parameters(build_model(config, seed=0))
    print(report.format_text())
    print(f"total (M) = {report.total / 1e6:.3f}")
    return 0


def cmd_verify(args) -> int:
    results = run_suites(args.suite)
    print(format_results(results), end="")
    return 0 if all(r.passed for r in results) else 1


def cmd_synth_gen(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg["data"]["master_seed"] = args.seed
    data_cfg = data_config_from(cfg["data"])
    cfg["data"] = section_from("data", data_cfg)
    _print_resolved(cfg)
    manifest = generate_dataset(args.out, data_cfg)
    counts = split_counts(data_cfg.n_clips, data_cfg.split_ratios)
    print(f"wrote dataset to {args.out}")
    for split, n in zip(SPLITS, counts):
        print(f"  {split}: {n} clips")
    print(f"  frames per clip: {manifest.n_frames}, "
          f"mel bins: {data_cfg.n_mels}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    manifest = _load_data(args.data)
    cfg["data"] = section_from("data", manifest.config)
    model_cfg = _reconciled_model_config(cfg, manifest)
    cfg["model"] = section_from("model", model_cfg)
    train_cfg = train_config_from(cfg["train"])
    eval_cfg = eval_config_from(cfg["eval"])
    postproc = postproc_config_from(cfg["postproc"])

    model = build_model(model_cfg, seed=train_cfg.seed)
    result = train(model, manifest, train_cfg, eval_cfg, postproc, args.out)
    with open(result.log_path, encoding="utf-8") as fh:
        print(fh.read(), end="")
    print(f"best checkpoint: {result.best_checkpoint}")
    print(f"last checkpoint: {result.last_checkpoint}")
    return 0


def _median_notes(widths, hop_seconds: float, time_factor: int) -> list[str]:
    if isinstance(widths, int):
        widths = (widths,)
    notes = []
    for width in dict.fromkeys(widths):
        ms = width * hop_seconds * 1000.0
        notes.append(
            f"median filter width {width} spans ≈{ms:.0f} ms at data "
            f"hop {hop_seconds:g} s ({width} posterior frames of "
            f"{hop_seconds * time_factor:g} s)")
    return notes


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    manifest = _load_data(args.data)
    if not os.path.exists(args.checkpoint):
        raise ConfigurationError(
            f"checkpoint file not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    if model.config.class_names and \
            model.config.class_names != manifest.config.classes:
        raise ConfigurationError(
            f"checkpoint classes {model.config.class_names} do not match "
            f"dataset classes {manifest.config.classes}")
    cfg["model"] = section_from("model", model.config)
    cfg["data"] = section_from("data", manifest.config)
    eval_cfg = eval_config_from(cfg["eval"])
    postproc = postproc_config_from(cfg["postproc"])
    _print_resolved(cfg)

    widths = filter_widths(postproc, len(manifest.config.classes))
    for note in _median_notes(widths, manifest.config.hop_seconds,
                              model.config.time_factor):
        print(note)
    result = evaluate_model(model, manifest, args.split, eval_cfg, postproc,
                            out_dir=args.out)
    text = result.format_text()
    print(text)
    if args.out is not None:
        report_path = os.path.join(args.out, f"report_{args.split}.txt")
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {report_path} and detections_{args.split}.tsv")
    return 0


def _parse_model_entries(entries, base_section):
    named = []
    for entry in entries:
        name, sep, specs = entry.partition("=")
        if not sep or not name.strip():
            raise ConfigurationError(
                f"--model entry {entry!r} is not of the form "
                f"name=layer_specs")
        section = dict(base_section)
        section["layer_specs"] = specs.strip()
        named.append((name.strip(), section))
    return named


def cmd_matrix(args) -> int:
    cfg = _load_config(args)
    manifest = _load_data(args.data)
    cfg["data"] = section_from("data", manifest.config)
    entries = args.model or [f"model={cfg['model']['layer_specs']}"]
    named_sections = _parse_model_entries(entries, cfg["model"])
    named_configs = []
    for name, section in named_sections:
        sub = dict(cfg)
        sub["model"] = section
        named_configs.append((name, _reconciled_model_config(sub, manifest)))
    train_cfg = train_config_from(cfg["train"])
    eval_cfg = eval_config_from(cfg["eval"])
    postproc = postproc_config_from(cfg["postproc"])
    _print_resolved(cfg)

    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise ConfigurationError(f"no seeds in {args.seeds!r}")
    print(f"runs: {len(named_configs)} configs x {len(seeds)} seeds, "
          f"jobs={args.jobs}")
    run_matrix(named_configs, manifest, train_cfg, eval_cfg, postproc,
               args.out, seeds, jobs=args.jobs)
    table = os.path.join(args.out, "matrix.tsv")
    with open(table, encoding="utf-8") as fh:
        print(fh.read(), end="")
    print(f"wrote {table}")
    return 0


# -- parser ---------------------------------------------------------------------

def _add_config_flags(p) -> None:
    p.add_argument("--config", help="sectioned key=value config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count-params",
                       help="itemized trainable-parameter counts")
    p.add_argument("--model-config", help="config file with a [model] block")
    p.add_argument("--preset", help="named model preset; see --table")
    p.add_argument("--table", choices=sorted(TABLES),
                   help="print all presets of one published table")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("verify", help="run the self-verification suites")
    p.add_argument("--suite", choices=SUITE_NAMES + ("all",), default="all")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth-gen", help="generate the synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override data.master_seed")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="train a detector on a dataset")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--out", help="directory for report and detections")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("matrix",
                       help="train a grid of model variants x seeds")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="sweep output directory")
    p.add_argument("--model", action="append", metavar="NAME=LAYER_SPECS",
                   help="model variant as name=branch-shape string "
                        "(repeatable); default: the [model] section")
    p.add_argument("--seeds", default="0,1,2",
                   help="comma-separated training seeds")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel training processes")
    p.set_defaults(func=cmd_matrix)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, TrainingDiverged) as exc:
        print(f"{PROG}: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
