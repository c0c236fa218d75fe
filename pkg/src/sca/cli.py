"""Command line entry point: ``sca run|eval|export|gen-data``.

Exit status is 0 on success, 2 for usage errors (argparse) and 1 for any
runtime failure, which is reported as a single ``error:`` line on stderr.
Set ``SCA_LOG_LEVEL`` (e.g. ``INFO`` or ``DEBUG``) for more output; it
affects verbosity only.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from sca import config as config_mod
from sca.data import LabeledDataset, TargetDataset, load_features_csv, save_features_csv
from sca.errors import ConfigError, ContractError, NonFiniteLoss, ParseError, SamplingUnavailable
from sca.evaluation import a_distance, accuracy, export_embeddings
from sca.model import forward, load_checkpoint
from sca.pseudo import assign_pseudo_labels
from sca.trainer import build_datasets, run_ablation, run_experiment

RUNTIME_ERRORS = (ConfigError, ContractError, ParseError, NonFiniteLoss, SamplingUnavailable, OSError)


def _cmd_run(args) -> int:
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.variant == "all":
        runs = run_ablation(cfg, args.out)
        for name, run in runs.items():
            print(f"{name}: final target_acc={_final(run, 'target_acc')} source_acc={_final(run, 'source_acc')}")
        return 0
    if args.variant is not None:
        cfg["variant"] = args.variant
    run = run_experiment(cfg, args.out)
    print(f"{cfg['variant']}: final target_acc={_final(run, 'target_acc')} source_acc={_final(run, 'source_acc')}")
    return 0


def _final(run, key):
    value = run.history[-1].get(key) if run.history else None
    return "n/a" if value is None else f"{value:.4f}"


def _cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    data = load_features_csv(args.data, params.num_classes)
    if isinstance(data, LabeledDataset):
        print(f"accuracy {accuracy(params, data):.6f}")
    else:
        print("accuracy n/a (unlabeled data)")
    if args.target is not None:
        other = load_features_csv(args.target, params.num_classes)
        rep = a_distance(forward(params, data.features).embedding, forward(params, other.features).embedding)
        print(f"d_A {rep.d_A:.6f}")
    return 0


def _cmd_export(args) -> int:
    params = load_checkpoint(args.checkpoint)
    source = load_features_csv(args.source, params.num_classes)
    target = load_features_csv(args.target, params.num_classes)
    if not isinstance(source, LabeledDataset):
        raise ConfigError(f"{args.source}: source CSV must be labeled")
    if isinstance(target, LabeledDataset):
        # labeled target rows are treated as unlabeled; their labels are not used
        target = TargetDataset(target.features)
    pseudo = assign_pseudo_labels(params, target, args.threshold)
    export_embeddings(params, source, target, pseudo, args.out)
    print(f"wrote {args.out} ({source.n + target.n} rows, {len(pseudo)} pseudo-labeled)")
    return 0


def _cmd_gen_data(args) -> int:
    cfg = config_mod.load(args.config) if args.config else config_mod.defaults()
    cfg["task"] = args.task
    if args.seed is not None:
        cfg["seed"] = args.seed
    errors = config_mod.validate(cfg)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    source, target = build_datasets(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_features_csv(out / "source.csv", source.features, source.labels)
    save_features_csv(out / "target.csv", target.features)
    save_features_csv(out / "target_eval.csv", target.features, target.hidden_labels)
    run_cfg = {**cfg, "task": "csv", "source_csv": str((out / "source.csv").resolve()),
               "target_csv": str((out / "target.csv").resolve()),
               "target_eval_csv": str((out / "target_eval.csv").resolve())}
    (out / "run.cfg").write_text(config_mod.dump(run_cfg), encoding="utf-8")
    print(f"wrote {source.n} source and {target.n} target rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sca", description="Two-stage domain adaptation with triplets.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=[*config_mod.VARIANTS, "all"])
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="accuracy and A-distance of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="labeled CSV to score")
    p.add_argument("--target", help="second-domain CSV; enables the A-distance")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export", help="write bottleneck embeddings with pseudo labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.9)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("gen-data", help="write a synthetic source/target pair as CSV")
    p.add_argument("--task", required=True, choices=["moons", "blobs"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="config file supplying generator settings")
    p.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SCA_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
