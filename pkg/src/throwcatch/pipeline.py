"""Staged pipeline: demos -> encoder -> human policy -> training -> evaluation.

Every stage's output file is content-addressed by a digest of the config
fields it depends on plus its upstream stages' digests, so rerunning with an
unchanged config is a no-op and deleting one artifact reruns exactly that
stage and its dependents.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import Config, config_digest, _to_jsonable
from .demos import HumanPolicy, bc_inputs, collect_demos, train_human_policy
from .datasets import load_demo_dataset, save_demo_dataset
from .encoder import VisionEncoder, pretrain_encoder
from .errors import ContractViolation
from .evaluate import controllers_from_checkpoint, evaluate
from .mappo import Trainer

STAGES = ("collect-demos", "pretrain-encoder", "pretrain-human-policy", "train", "evaluate")


def stage_digests(config: Config) -> dict:
    """Per-stage content digests chaining each stage to its dependencies."""
    demos = config_digest(
        {
            "seed": config.seed,
            "world": _to_jsonable(config.world),
            "vision": _to_jsonable(config.vision),
            "demo": _to_jsonable(config.demo),
        }
    )
    encoder = config_digest({"demos": demos, "vision": _to_jsonable(config.vision)})
    human = config_digest({"demos": demos, "bc": _to_jsonable(config.bc)})
    train = config_digest(
        {
            "encoder": encoder,
            "human": human,
            "trainer": _to_jsonable(config.trainer),
            "world": _to_jsonable(config.world),
            "seed": config.seed,
        }
    )
    ev = config_digest({"train": train, "eval": _to_jsonable(config.eval)})
    return {
        "collect-demos": demos,
        "pretrain-encoder": encoder,
        "pretrain-human-policy": human,
        "train": train,
        "evaluate": ev,
    }


def stage_paths(config: Config, workdir: Path) -> dict:
    d = stage_digests(config)
    return {
        "collect-demos": workdir / f"demos_{d['collect-demos']}.bin",
        "pretrain-encoder": workdir / f"encoder_{d['pretrain-encoder']}.bin",
        "pretrain-human-policy": workdir / f"human_{d['pretrain-human-policy']}.bin",
        "train": workdir / f"train_{d['train']}" / "checkpoint_final.bin",
        "evaluate": workdir / f"eval_{d['evaluate']}.json",
    }


def run_pipeline(config: Config, workdir, progress=None) -> dict:
    """Run (or resume) every stage; returns {stage: artifact path} plus report.

    ``progress`` is an optional callable taking (stage, status) with status
    "cached" | "running" | "done".
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    paths = stage_paths(config, workdir)
    note = progress or (lambda stage, status: None)
    results = {"paths": {k: str(v) for k, v in paths.items()}}

    def run_stage(name, fn):
        path = paths[name]
        if path.exists():
            note(name, "cached")
            return
        note(name, "running")
        try:
            fn(path)
        except Exception as exc:
            raise ContractViolation(f"pipeline stage {name!r} failed: {exc}") from exc
        note(name, "done")

    def do_demos(path):
        records, stats = collect_demos(
            config.demo.episodes, config.world, config.demo, seed=config.seed,
            vision=config.vision,
        )
        save_demo_dataset(records, path)
        results["demo_stats"] = {
            k: v for k, v in stats.items() if k != "misses"
        } | {"records": len(records)}

    run_stage("collect-demos", do_demos)
    records = load_demo_dataset(paths["collect-demos"])

    def do_encoder(path):
        rng = np.random.default_rng(config.seed + 1)
        frames = [r.frame for r in records]
        encoder, history = pretrain_encoder(
            frames, config.vision, rng, log_every=max(1, config.vision.epochs // 20)
        )
        with open(path, "wb") as fh:
            encoder.save(fh)
        results["encoder_history"] = history[-1] if history else {}

    run_stage("pretrain-encoder", do_encoder)

    def do_human(path):
        rng = np.random.default_rng(config.seed + 2)
        policy, history = train_human_policy(records, config.bc, rng)
        with open(path, "wb") as fh:
            policy.save(fh)
        results["bc_history"] = history[-1] if history else {}

    run_stage("pretrain-human-policy", do_human)

    with open(paths["pretrain-encoder"], "rb") as fh:
        encoder = VisionEncoder.load(fh)
    with open(paths["pretrain-human-policy"], "rb") as fh:
        human = HumanPolicy.load(fh)

    def do_train(path):
        train_dir = path.parent
        train_dir.mkdir(parents=True, exist_ok=True)
        trainer = Trainer(config, workdir=train_dir, encoder=encoder, human_policy=human)
        trainer.train()
        final = train_dir / f"checkpoint_{trainer.iteration:05d}.bin"
        path.write_bytes(final.read_bytes())
        results["final_metrics"] = trainer.metrics[-1] if trainer.metrics else {}

    run_stage("train", do_train)

    def do_eval(path):
        throw_ctl, catch_ctl = controllers_from_checkpoint(paths["train"], config)
        pool = config.vision.pool
        report = evaluate(
            throw_ctl,
            catch_ctl,
            config,
            feature_fn=lambda frame: encoder.encode_frame(frame, pool),
        )
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")

    run_stage("evaluate", do_eval)
    results["report"] = json.loads(paths["evaluate"].read_text())
    return results
