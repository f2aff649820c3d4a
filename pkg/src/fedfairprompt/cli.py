"""Command line interface: gen-data, run, sweep, and report.

Every flag value is routed through the config parser so a bad
``--alpha`` fails with the same field-naming message as a bad line in a
config file. Exit status is nonzero iff any run failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .config import Config, parse_config, parse_value
from .data import Dataset, save_embeddings
from .encoder import EncoderConfig, VisionEncoder
from .federation import load_splits
from .harness import PRESETS, SWEEP_AXES, run_experiment, run_preset, sweep

__all__ = ["main"]

# CLI flag name -> Config field name
_FLAG_FIELDS = (
    ("seed", "master_seed"),
    ("out", "out_dir"),
    ("method", "method"),
    ("alpha", "alpha"),
    ("clients", "clients"),
    ("rounds", "rounds"),
    ("mu", "mu"),
    ("lambda1", "lambda1"),
    ("k", "subspace_rank"),
)

_FLAG_HELP = {
    "seed": "master seed for every derived stream",
    "out": "output directory",
    "method": "training method (fvlfp, fedavg_baseline, wo-cdfp, wo-dsop, wo-fpf)",
    "alpha": "Dirichlet concentration for the client partition",
    "clients": "number of federated clients",
    "rounds": "federation rounds",
    "mu": "hinge margin of the group-neutrality regularizer",
    "lambda1": "weight of the fairness term in the local loss",
    "k": "demographic subspace rank",
}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="key=value config file")
    for flag, _field in _FLAG_FIELDS:
        parser.add_argument(f"--{flag}", metavar="V", help=_FLAG_HELP[flag])


def _build_config(args: argparse.Namespace) -> Config:
    overrides = {}
    for flag, field in _FLAG_FIELDS:
        raw = getattr(args, flag)
        if raw is not None:
            overrides[field] = parse_value(field, raw)
    return parse_config(args.config, overrides)


def _print_summary(summary: dict) -> None:
    keys = ("method", "rounds_completed", "a_b", "phi_a", "phi_demo", "phi_eq",
            "f_global")
    for key in keys:
        value = summary[key]
        text = f"{value:.6f}" if isinstance(value, float) else str(value)
        print(f"{key}: {text}")


def _cmd_gen_data(args: argparse.Namespace) -> int:
    config = replace(_build_config(args), data_dir="")
    encoder = VisionEncoder(
        EncoderConfig(
            seed=config.encoder_seed,
            mlp_ratio=config.mlp_ratio,
            prompt_tokens=config.prompt_tokens,
        )
    )
    os.makedirs(config.out_dir, exist_ok=True)
    for name, split in zip(("train", "val", "test"), load_splits(config)):
        # one frozen-encoder feature row per image: the mean patch
        # embedding, the stand-in for features from an external encoder
        rows = encoder.embed_patches(split.features)
        features = rows.mean(axis=1, keepdims=True)
        path = os.path.join(config.out_dir, f"{name}.emb")
        save_embeddings(
            Dataset(features=features, labels=split.labels, groups=split.groups,
                    kind="features"),
            path,
        )
        print(f"wrote {path} ({len(split)} samples, dim {features.shape[2]})")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = _build_config(args)
    report = run_experiment(config)
    print(f"outputs in {config.out_dir}")
    _print_summary(report.summary())
    if report.incomplete:
        print(f"run failed: {report.failure}", file=sys.stderr)
        return 1
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    if bool(args.preset) == bool(args.axis):
        raise ValueError("sweep needs exactly one of --preset or --axis/--values")
    if args.preset:
        config = _build_config(args)
        result = run_preset(
            args.preset,
            master_seed=config.master_seed,
            out_dir=config.out_dir,
            replicates=args.replicates,
        )
        print(result.table(), end="")
        if result.failed:
            print(f"preset {args.preset} had failed cells", file=sys.stderr)
            return 1
        return 0
    if not args.values:
        raise ValueError("--axis needs --values (comma separated)")
    config = _build_config(args)
    values = [parse_value(args.axis, v) for v in args.values.split(",")]
    result = sweep(config, args.axis, values, replicates=args.replicates)
    print(result.table(), end="")
    if result.failed:
        print(f"sweep over {args.axis} had failed cells", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    run_dir = args.out or "runs"
    json_path = os.path.join(run_dir, "report.json")
    md_path = os.path.join(run_dir, "summary.md")
    if not os.path.exists(json_path):
        raise ValueError(f"no report.json under {run_dir}")
    with open(json_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    with open(md_path, "r", encoding="utf-8") as fh:
        print(fh.read(), end="")
    if payload.get("incomplete"):
        print(f"run failed: {payload.get('failure', '')}", file=sys.stderr)
        return 1
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedfairprompt",
        description="fairness-aware federated prompt learning on a frozen encoder",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write train/val/test embedding files")
    _add_common_flags(gen)
    gen.set_defaults(func=_cmd_gen_data)

    run = sub.add_parser("run", help="single federation run")
    _add_common_flags(run)
    run.set_defaults(func=_cmd_run)

    sw = sub.add_parser("sweep", help="axis sweep or named preset")
    _add_common_flags(sw)
    sw.add_argument("--preset", choices=sorted(PRESETS), help="named table preset")
    sw.add_argument("--axis", choices=SWEEP_AXES, help="config field to sweep")
    sw.add_argument("--values", metavar="V1,V2,...", help="swept values")
    sw.add_argument("--replicates", type=int, default=3, metavar="R",
                    help="replicates per cell (default 3)")
    sw.set_defaults(func=_cmd_sweep)

    rep = sub.add_parser("report", help="print the summary of a finished run")
    _add_common_flags(rep)
    rep.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
