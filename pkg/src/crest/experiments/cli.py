"""Command-line entry point for the experiment suites."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from crest.core import derive_seed
from crest.experiments.config import ExperimentConfig, default_config, make_env
from crest.experiments.records import read_records, write_json, write_records
from crest.experiments.report import to_csv, write_report
from crest.experiments.runners import (
    randomization_for, run_blocks_scaling, run_color_shift, run_crate_stiffness, run_discovery, run_pretrain,
    run_table1,
)
from crest.train import Policy, transfer_and_finetune

DEFAULT_EXPERIMENT = {
    "discover": "discover_only",
    "table1": "table1",
    "pretrain": "pretrain",
    "transfer": "pretrain",
    "blocks-scaling": "blocks_scaling",
    "color-shift": "blocks_color_shift",
    "crate-stiffness": "crate_stiffness",
}


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.command == "color-shift" and getattr(args, "env", None) == "crate":
        cfg = default_config("crate_color_shift")
    else:
        cfg = default_config(DEFAULT_EXPERIMENT[args.command])
    if args.seed is not None:
        cfg = cfg.with_updates(seeds=[args.seed])
    return cfg


def out_dir(args: argparse.Namespace, cfg: ExperimentConfig) -> Path:
    path = Path(args.out or cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(records, out: Path, name: str) -> None:
    write_records(out / f"{name}.jsonl", records)
    print(write_report(records, out), end="")


def cmd_discover(args, cfg, out):
    records = run_discovery(cfg, args.jobs)
    for rec in records:
        write_json(out / f"structure_seed{rec.seed}.json", {**rec.structure, "metrics": rec.metrics,
                                                             "config": cfg.to_json(), "seeds": [rec.seed]})
    _finish(records, out, "discover")


def cmd_table1(args, cfg, out):
    rows, records = run_table1(cfg, args.jobs)
    write_records(out / "table1.jsonl", records)
    (out / "table1_rows.csv").write_text(to_csv(rows))
    print(write_report(records, out), end="")


def cmd_pretrain(args, cfg, out):
    for seed in cfg.seeds:
        for kind, (policy, trace, structure) in run_pretrain(cfg, seed).items():
            stem = f"{kind}_seed{seed}"
            write_json(out / f"policy_{stem}.json", policy.to_json())
            trace.write_jsonl(out / f"pretrain_{stem}.jsonl")
            print(f"{kind} seed {seed}: solved={trace.solved} updates={trace.updates_to_solve}")
        if structure is not None:
            env = make_env(cfg.environment)
            write_json(out / f"structure_seed{seed}.json", structure.to_json(env.schema, env.param_names))


def cmd_transfer(args, cfg, out):
    target = make_env(cfg.environment, target=True)
    train_cfg = cfg.train_config()
    for seed in cfg.seeds:
        if args.weights:
            with open(args.weights) as fh:
                policies = {"loaded": Policy.from_json(json.load(fh))}
        else:
            policies = {kind: p for kind, (p, _, _) in run_pretrain(cfg, seed).items()}
        for name, policy in policies.items():
            zero_shot, trace = transfer_and_finetune(policy, target, train_cfg, derive_seed(seed, "transfer"),
                                                     target.default_distribution(),
                                                     randomization_for(policy.kind))
            stem = f"{name}_seed{seed}"
            trace.write_jsonl(out / f"finetune_{stem}.jsonl")
            write_json(out / f"policy_tuned_{stem}.json", policy.to_json())
            print(f"{name} seed {seed}: zero_shot={zero_shot} updates={trace.updates_to_solve}")


def cmd_blocks_scaling(args, cfg, out):
    _finish(run_blocks_scaling(cfg, args.jobs), out, "blocks_scaling")


def cmd_color_shift(args, cfg, out):
    _finish(run_color_shift(cfg, args.jobs), out, cfg.experiment)


def cmd_crate_stiffness(args, cfg, out):
    _finish(run_crate_stiffness(cfg, args.jobs), out, "crate_stiffness")


def cmd_report(args):
    records = [r for path in args.inputs for r in read_records(path)]
    out = Path(args.out or "report")
    print(write_report(records, out), end="")


COMMANDS = {
    "discover": cmd_discover,
    "table1": cmd_table1,
    "pretrain": cmd_pretrain,
    "transfer": cmd_transfer,
    "blocks-scaling": cmd_blocks_scaling,
    "color-shift": cmd_color_shift,
    "crate-stiffness": cmd_crate_stiffness,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config JSON; defaults per command")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        if name == "transfer":
            p.add_argument("--weights", help="pretrained policy JSON; pretrains from scratch when omitted")
        if name == "color-shift":
            p.add_argument("--env", choices=("blocks", "crate"), default="blocks")
        if name == "report":
            p.add_argument("inputs", nargs="+", help="record files or directories of *.jsonl")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        cmd_report(args)
        return 0
    cfg = load_config(args)
    out = out_dir(args, cfg)
    cfg.dump(out / "config.json")
    COMMANDS[args.command](args, cfg, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
