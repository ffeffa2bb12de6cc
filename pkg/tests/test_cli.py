"""In-process CLI smoke tests: subcommands, error records, determinism."""

import hashlib
import json

import pytest

from throwcatch.cli import main
from throwcatch.config import Config, save_config


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    cfg = Config()
    cfg.demo.episodes = 14
    cfg.vision.epochs = 25
    cfg.bc.epochs = 25
    cfg.trainer.n_envs = 2
    cfg.trainer.t_max = 16
    cfg.trainer.iterations = 2
    cfg.trainer.epochs = 2
    cfg.trainer.hidden = (32, 32)
    cfg.trainer.minibatch_size = 64
    cfg.trainer.scripted_thrower = True
    cfg.eval.n_episodes = 4
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    save_config(cfg, path)
    return str(path)


@pytest.fixture(scope="module")
def demo_file(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("demos") / "demos.bin"
    assert main(["collect-demos", "--config", tiny_config, "--out", str(out)]) == 0
    return str(out)


def test_collect_demos_writes_dataset(demo_file):
    from throwcatch.datasets import load_demo_dataset

    records = load_demo_dataset(demo_file)
    assert len(records) >= 100


def test_collect_demos_deterministic(tiny_config, tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert main(["collect-demos", "--config", tiny_config, "--out", str(a)]) == 0
    assert main(["collect-demos", "--config", tiny_config, "--out", str(b)]) == 0
    assert hashlib.sha256(a.read_bytes()).hexdigest() == hashlib.sha256(b.read_bytes()).hexdigest()


def test_pretrain_encoder(tiny_config, demo_file, tmp_path):
    out = tmp_path / "encoder.bin"
    rc = main(
        ["pretrain-encoder", "--config", tiny_config, "--demos", demo_file, "--out", str(out)]
    )
    assert rc == 0
    from throwcatch.encoder import VisionEncoder

    with open(out, "rb") as fh:
        VisionEncoder.load(fh)


def test_pretrain_human_policy(tiny_config, demo_file, tmp_path):
    out = tmp_path / "human.bin"
    rc = main(
        [
            "pretrain-human-policy",
            "--config",
            tiny_config,
            "--demos",
            demo_file,
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    from throwcatch.demos import HumanPolicy

    with open(out, "rb") as fh:
        HumanPolicy.load(fh)


def test_train_and_evaluate(tiny_config, tmp_path):
    workdir = tmp_path / "run"
    rc = main(
        [
            "train",
            "--config",
            tiny_config,
            "--workdir",
            str(workdir),
            "--features",
            "oracle",
            "--scripted-thrower",
        ]
    )
    assert rc == 0
    metrics = [json.loads(l) for l in (workdir / "metrics.jsonl").read_text().splitlines()]
    assert len(metrics) == 2
    ckpts = sorted(workdir.glob("checkpoint_*.bin"))
    assert ckpts

    out = tmp_path / "report.json"
    rc = main(
        [
            "evaluate",
            "--config",
            tiny_config,
            "--checkpoint",
            str(ckpts[-1]),
            "--features",
            "oracle",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    report = json.loads(out.read_text())
    assert 0.0 <= report["success_rate"] <= report["hit_rate"] <= 1.0


def test_train_metrics_deterministic(tiny_config, tmp_path):
    def run(name):
        workdir = tmp_path / name
        assert (
            main(
                [
                    "train",
                    "--config",
                    tiny_config,
                    "--workdir",
                    str(workdir),
                    "--features",
                    "oracle",
                    "--scripted-thrower",
                ]
            )
            == 0
        )
        rows = []
        for line in (workdir / "metrics.jsonl").read_text().splitlines():
            row = json.loads(line)
            row.pop("wall_time", None)
            rows.append(row)
        return hashlib.sha256(json.dumps(rows, sort_keys=True).encode()).hexdigest()

    assert run("a") == run("b")


def test_evaluate_oracle_baseline(tiny_config, tmp_path):
    out = tmp_path / "oracle.json"
    rc = main(
        ["evaluate", "--config", tiny_config, "--oracle", "--features", "oracle", "--out", str(out)]
    )
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["hit_rate"] >= 0.5


def test_export_trajectories(tiny_config, tmp_path):
    out = tmp_path / "traj.csv"
    rc = main(
        [
            "export-trajectories",
            "--config",
            tiny_config,
            "--features",
            "oracle",
            "--episodes",
            "3",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    text = out.read_text()
    assert text.startswith("episode,")
    assert text.count("# episode") == 3


def test_unknown_input_produces_json_error(tmp_path, capsys):
    rc = main(
        [
            "pretrain-encoder",
            "--demos",
            str(tmp_path / "missing.bin"),
            "--out",
            str(tmp_path / "enc.bin"),
        ]
    )
    assert rc != 0
    err = capsys.readouterr().err.strip().splitlines()[-1]
    record = json.loads(err)
    assert record["error"]


def test_bad_config_file_produces_json_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = main(["collect-demos", "--config", str(bad), "--out", str(tmp_path / "x.bin")])
    assert rc != 0
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"]
