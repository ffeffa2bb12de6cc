"""Command-line entry points.

Every subcommand takes ``--config`` (JSON config file; defaults used when
omitted) and ``--seed`` (overrides the config seed).  Failures print a
machine-readable error record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .config import Config, config_digest, load_config, save_config
from .datasets import load_demo_dataset, save_demo_dataset
from .demos import HumanPolicy, collect_demos, train_human_policy
from .encoder import VisionEncoder, pretrain_encoder
from .errors import ContractViolation, InfeasibleDemo, NumericFault
from .evaluate import (
    PerfectCatcher,
    ScriptedController,
    controllers_from_checkpoint,
    evaluate,
    export_trajectories,
    print_report,
    run_ablation_suite,
)
from .mappo import Trainer
from .pipeline import run_pipeline


def _load_config(args) -> Config:
    config = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        config.seed = args.seed
    return config


def _feature_fn(name: str, encoder_path, config: Config):
    if name == "zero":
        return None, None
    if name == "oracle":
        from .env import oracle_features

        return oracle_features, None
    if name == "encoder":
        if not encoder_path:
            raise ContractViolation("--features encoder requires --encoder PATH")
        with open(encoder_path, "rb") as fh:
            encoder = VisionEncoder.load(fh)
        pool = config.vision.pool
        return (lambda frame: encoder.encode_frame(frame, pool)), encoder
    raise ContractViolation(f"unknown feature source {name!r}")


# -- subcommands -------------------------------------------------------------


def cmd_collect_demos(args) -> int:
    config = _load_config(args)
    episodes = args.episodes or config.demo.episodes
    records, stats = collect_demos(
        episodes, config.world, config.demo, seed=config.seed, vision=config.vision
    )
    save_demo_dataset(records, args.out)
    misses = stats.pop("misses")
    stats["records"] = len(records)
    stats["miss_median"] = float(np.median(misses)) if misses else None
    print(json.dumps(stats))
    return 0


def cmd_pretrain_encoder(args) -> int:
    config = _load_config(args)
    records = load_demo_dataset(args.demos)
    rng = np.random.default_rng(config.seed + 1)
    epochs = args.epochs or config.vision.epochs
    encoder, history = pretrain_encoder(
        [r.frame for r in records],
        config.vision,
        rng,
        epochs=epochs,
        log_every=max(1, epochs // 20),
    )
    with open(args.out, "wb") as fh:
        encoder.save(fh)
    print(json.dumps(history[-1] if history else {}))
    return 0


def cmd_pretrain_human_policy(args) -> int:
    config = _load_config(args)
    records = load_demo_dataset(args.demos)
    rng = np.random.default_rng(config.seed + 2)
    policy, history = train_human_policy(
        records, config.bc, rng, epochs=args.epochs, min_records=args.min_records
    )
    with open(args.out, "wb") as fh:
        policy.save(fh)
    print(json.dumps(history[-1] if history else {}))
    return 0


def _apply_train_flags(config: Config, args) -> None:
    if args.ablate:
        config.trainer.ablate = args.ablate
        config.trainer.__post_init__()
    if args.lambda_reg is not None:
        config.trainer.lambda_reg = args.lambda_reg
        config.trainer.__post_init__()
    if getattr(args, "iterations", None):
        config.trainer.iterations = args.iterations
    if getattr(args, "scripted_thrower", False):
        config.trainer.scripted_thrower = True


def cmd_train(args) -> int:
    config = _load_config(args)
    _apply_train_flags(config, args)
    feature_fn, encoder = _feature_fn(args.features, args.encoder, config)
    human = None
    if args.human:
        with open(args.human, "rb") as fh:
            human = HumanPolicy.load(fh)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    save_config(config, workdir / "config.json")
    trainer = Trainer(
        config, workdir=workdir, encoder=encoder, human_policy=human, feature_fn=feature_fn
    )
    metrics = trainer.train()
    last = metrics[-1]
    print(
        json.dumps(
            {
                "iterations": trainer.iteration,
                "reward_mean": last["reward_mean"],
                "hit_rate": last["hit_rate"],
                "success_rate": last["success_rate"],
            }
        )
    )
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    feature_fn, _ = _feature_fn(args.features, args.encoder, config)
    if args.checkpoint:
        throw_ctl, catch_ctl = controllers_from_checkpoint(args.checkpoint, config)
    elif args.oracle:
        throw_ctl, catch_ctl = ScriptedController(config), PerfectCatcher(config.world)
    else:
        raise ContractViolation("evaluate needs --checkpoint PATH or --oracle")
    report = evaluate(
        throw_ctl,
        catch_ctl,
        config,
        n_episodes=args.episodes,
        object_set=args.object_set,
        feature_fn=feature_fn,
    )
    print_report(report)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def cmd_export_trajectories(args) -> int:
    config = _load_config(args)
    feature_fn, _ = _feature_fn(args.features, args.encoder, config)
    if args.checkpoint:
        throw_ctl, catch_ctl = controllers_from_checkpoint(args.checkpoint, config)
    else:
        throw_ctl, catch_ctl = ScriptedController(config), PerfectCatcher(config.world)
    written = export_trajectories(
        throw_ctl,
        catch_ctl,
        config,
        n_episodes=args.episodes,
        out_path=args.out,
        object_set=args.object_set,
        feature_fn=feature_fn,
    )
    print(json.dumps({"episodes_written": written, "out": str(args.out)}))
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args)
    feature_fn, encoder = _feature_fn(args.features, args.encoder, config)
    human = None
    if args.human:
        with open(args.human, "rb") as fh:
            human = HumanPolicy.load(fh)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    rows = run_ablation_suite(
        config,
        args.budget,
        workdir,
        human_policy=human,
        feature_fn=feature_fn,
        encoder=encoder,
        eval_episodes=args.eval_episodes,
    )
    header = f"{'arm':<14} {'lambda':>7} {'set':<7} {'hit':>7} {'success':>8}"
    print(header)
    for row in rows:
        print(
            f"{row['arm']:<14} {row['lambda_reg']:>7.2f} {row['object_set']:<7}"
            f" {row['hit_rate']:>7.3f} {row['success_rate']:>8.3f}"
        )
    return 0


def cmd_pipeline(args) -> int:
    config = _load_config(args)

    def progress(stage, status):
        print(json.dumps({"stage": stage, "status": status}), flush=True)

    results = run_pipeline(config, args.workdir, progress=progress)
    report = results["report"]
    print(
        json.dumps(
            {
                "config_digest": config_digest(config),
                "hit_rate": report["hit_rate"],
                "success_rate": report["success_rate"],
            }
        )
    )
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="throwcatch", description="planar two-arm throw-and-catch pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")

    p = sub.add_parser("collect-demos", help="collect scripted demonstrations")
    common(p)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_collect_demos)

    p = sub.add_parser("pretrain-encoder", help="train the visual encoder on demos")
    common(p)
    p.add_argument("--demos", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain_encoder)

    p = sub.add_parser("pretrain-human-policy", help="behavior-clone the human policy")
    common(p)
    p.add_argument("--demos", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--min-records", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain_human_policy)

    p = sub.add_parser("train", help="run MAPPO training")
    common(p)
    p.add_argument("--workdir", required=True)
    p.add_argument("--encoder", default=None)
    p.add_argument("--human", default=None)
    p.add_argument("--features", default="encoder", choices=("encoder", "oracle", "zero"))
    p.add_argument(
        "--ablate",
        default=None,
        choices=("open-loop", "no-marl", "no-human-reg", "no-hybrid"),
    )
    p.add_argument("--lambda-reg", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--scripted-thrower", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate checkpointed policies")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true", help="scripted thrower + oracle catcher")
    p.add_argument("--encoder", default=None)
    p.add_argument("--features", default="zero", choices=("encoder", "oracle", "zero"))
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--object-set", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("export-trajectories", help="export episode trajectories as CSV")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--encoder", default=None)
    p.add_argument("--features", default="zero", choices=("encoder", "oracle", "zero"))
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--object-set", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_trajectories)

    p = sub.add_parser("ablate", help="run the ablation suite and lambda sweep")
    common(p)
    p.add_argument("--workdir", required=True)
    p.add_argument("--budget", type=int, required=True, help="iterations per arm")
    p.add_argument("--encoder", default=None)
    p.add_argument("--human", default=None)
    p.add_argument("--features", default="encoder", choices=("encoder", "oracle", "zero"))
    p.add_argument("--eval-episodes", type=int, default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("pipeline", help="run all stages with caching")
    common(p)
    p.add_argument("--workdir", required=True)
    p.set_defaults(fn=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ContractViolation, InfeasibleDemo, NumericFault, OSError) as exc:
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "command": args.command,
        }
        print(json.dumps(record), file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected: include a traceback for diagnosis
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "command": args.command,
            "traceback": traceback.format_exc(),
        }
        print(json.dumps(record), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
