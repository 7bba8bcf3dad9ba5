"""Command-line entry point: ``rdbridge <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from ..data import load_features, save_features
from ..exceptions import ConfigError, ContractError, ParseError, ShapeError
from .checkpoint import load_checkpoint, model_from_state, save_checkpoint, trainer_state, config_from_state
from .config import ABLATIONS, load_config
from .gradcheck_suite import gradcheck_suite
from .synthetic import generate_synthetic
from .train import NonFiniteLossError, Trainer, dump_embeddings, evaluate_model, select_split

log = logging.getLogger("rdbridge")


def _cmd_gen_data(args) -> int:
    ds = generate_synthetic(n_classes=args.classes, pairs_per_class=args.pairs, d_model=args.dim,
                            noise_scale=args.noise, seed=args.seed)
    save_features(ds, args.out)
    print(f"wrote {ds.n_images} images, {ds.n_captions} captions to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    if args.ablation:
        config = config.with_ablation(args.ablation)
    overrides = {k: v for k, v in (("data", args.data), ("output", args.out), ("epochs", args.epochs)) if v is not None}
    if overrides:
        config = dataclasses.replace(config, **overrides)
    if not config.data:
        raise ConfigError(f"{args.config}: no 'data' key and no --data given")
    ds = load_features(config.data)
    trainer = Trainer(config, ds)
    result = trainer.run()
    save_checkpoint(trainer_state(trainer), config.output)
    best_path = config.output + ".best"
    save_checkpoint(result.best_state if result.best_state is not None else trainer_state(trainer), best_path)
    metrics_path = config.output + ".metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry) + "\n")
    last = result.log[-1]["val_mR"] if result.log else None
    print(f"trained {config.epochs} epochs; last val mR {last}; best val mR {result.best_mR}")
    print(f"wrote {config.output}, {best_path}, {metrics_path}")
    return 0


def _cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    model = model_from_state(state)
    ds = load_features(args.data)
    part = select_split(ds, config_from_state(state), args.split)
    report = evaluate_model(model, part, topk=args.topk)
    sys.stdout.write(report.to_text())
    return 0


def _cmd_gradcheck(args) -> int:
    report = gradcheck_suite(n_seeds=args.seeds)
    print(report.to_text())
    return 0 if report.passed else 1


def _cmd_dump(args) -> int:
    state = load_checkpoint(args.checkpoint)
    model = model_from_state(state)
    ds = load_features(args.data)
    part = select_split(ds, config_from_state(state), args.split)
    n = dump_embeddings(model, part, args.out)
    print(f"wrote {n} embeddings to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdbridge", description="Adapter-based cross-modal retrieval on features.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic feature file")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--pairs", type=int, default=64, help="images per class")
    p.add_argument("--dim", type=int, default=96)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train adapters from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--ablation", choices=[a for a in ABLATIONS if a != "frozen"])
    p.add_argument("--data", help="feature file (overrides the config's data key)")
    p.add_argument("--out", help="checkpoint path (overrides the config's output key)")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--topk", type=int, default=5)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("dump-embeddings", help="write common-space embeddings for plotting")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="all", choices=["train", "val", "test", "all"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ParseError, ConfigError, ShapeError, ContractError, NonFiniteLossError, OSError) as exc:
        print(f"rdbridge {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
