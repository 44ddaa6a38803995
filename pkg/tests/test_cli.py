import json

import pytest
from click.testing import CliRunner

from turnroute.cli import cli
from turnroute.trajectory import read_jsonl

CONFIG = """
seed = 7
[paths]
pool = "builtin:table2"
world = "builtin:specialist-4"
[provider]
kind = "hash"
dim = 64
[train]
max_epochs = 2
batch_size = 32
"""


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(CONFIG)
    return str(path)


@pytest.fixture()
def runner():
    return CliRunner()


def _collect(runner, config_path, out, episodes=6, policy="random", seed=None):
    args = ["collect", "--config", config_path, "--policy", policy,
            "--episodes", str(episodes), "--out", out]
    if seed is not None:
        args += ["--seed", str(seed)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    return result


def test_collect_writes_log_and_summary(runner, config_path, tmp_path):
    out = str(tmp_path / "log.jsonl")
    result = _collect(runner, config_path, out)
    assert "collected 6 episodes" in result.output
    trajectories = list(read_jsonl(out))
    assert len(trajectories) == 6


def test_collect_single_model_policy(runner, config_path, tmp_path):
    out = str(tmp_path / "log.jsonl")
    _collect(runner, config_path, out, policy="single:gpt-5")
    assert all(
        turn.model_id == "gpt-5" for t in read_jsonl(out) for turn in t.turns
    )


def test_collect_deterministic_bytes(runner, config_path, tmp_path):
    a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    _collect(runner, config_path, a, seed=3)
    _collect(runner, config_path, b, seed=3)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_train_dry_run(runner, config_path, tmp_path):
    log = str(tmp_path / "log.jsonl")
    _collect(runner, config_path, log, episodes=8)
    result = runner.invoke(cli, ["train", "--config", config_path, "--logs", log,
                                 "--out", str(tmp_path / "ckpt.npz"), "--dry-run"])
    assert result.exit_code == 0, result.output
    assert "dataset:" in result.output
    assert not (tmp_path / "ckpt.npz").exists()


def test_full_cycle_train_evaluate_analyze_export(runner, config_path, tmp_path):
    log = str(tmp_path / "log.jsonl")
    _collect(runner, config_path, log, episodes=10)

    ckpt = str(tmp_path / "ckpt.npz")
    result = runner.invoke(cli, ["train", "--config", config_path, "--logs", log, "--out", ckpt])
    assert result.exit_code == 0, result.output
    assert "checkpoint written" in result.output
    assert (tmp_path / "ckpt.loss.csv").exists()

    outdir = tmp_path / "eval"
    result = runner.invoke(cli, [
        "evaluate", "--config", config_path, "--checkpoint", ckpt,
        "--policies", "learned,random,single:gpt-5", "--episodes", "3", "--runs", "2",
        "--out", str(outdir), "--no-figures",
    ])
    assert result.exit_code == 0, result.output
    assert (outdir / "summary.csv").exists()
    assert (outdir / "run_meta.json").exists()
    assert (outdir / "learned" / "run0.jsonl").exists()
    assert (outdir / "single-gpt-5" / "lift.csv").exists()
    summary = (outdir / "summary.csv").read_text()
    assert "learned" in summary and "random" in summary

    report = tmp_path / "report"
    result = runner.invoke(cli, [
        "analyze", "--logs", str(outdir / "random" / "run0.jsonl"),
        "--out", str(report), "--no-figures",
    ])
    assert result.exit_code == 0, result.output
    assert (report / "phase_usage.csv").exists()

    emb = tmp_path / "embeddings.csv"
    result = runner.invoke(cli, ["export-embeddings", "--config", config_path,
                                 "--checkpoint", ckpt, "--out", str(emb)])
    assert result.exit_code == 0, result.output
    lines = emb.read_text().strip().splitlines()
    assert len(lines) == 1 + 4  # header + one row per pool model
    assert lines[0].startswith("model_id,e0,")


def test_evaluate_budget_scale_sweep(runner, config_path, tmp_path):
    outdir = tmp_path / "sweep"
    result = runner.invoke(cli, [
        "evaluate", "--config", config_path, "--policies", "random",
        "--episodes", "2", "--runs", "1", "--out", str(outdir),
        "--budget-scale", "0.5,1.0", "--no-figures",
    ])
    assert result.exit_code == 0, result.output
    assert (outdir / "budget-0.5x" / "summary.csv").exists()
    assert (outdir / "budget-1x" / "summary.csv").exists()
    meta = json.loads((outdir / "budget-0.5x" / "run_meta.json").read_text())
    assert meta["budget"] == pytest.approx(1.0)  # world default 2.0 scaled by 0.5


def test_ablation_flags_accepted(runner, config_path, tmp_path):
    log = str(tmp_path / "log.jsonl")
    _collect(runner, config_path, log, episodes=8)
    for flags in (["--no-error-penalty"], ["--no-history"],
                  ["--hardcoded-model-encoder"], ["--ridge"]):
        ckpt = str(tmp_path / f"ckpt-{flags[0][2:]}.npz")
        result = runner.invoke(cli, ["train", "--config", config_path, "--logs", log,
                                     "--out", ckpt] + flags)
        assert result.exit_code == 0, (flags, result.output)


def test_exit_code_config_error(runner, tmp_path):
    result = runner.invoke(cli, ["collect", "--config", str(tmp_path / "missing.toml"),
                                 "--out", str(tmp_path / "x.jsonl")])
    assert result.exit_code == 2
    assert "error:" in result.output


def test_exit_code_io_error(runner, config_path, tmp_path):
    result = runner.invoke(cli, ["train", "--config", config_path,
                                 "--logs", str(tmp_path / "missing.jsonl"),
                                 "--out", str(tmp_path / "ckpt.npz")])
    assert result.exit_code == 5


def test_exit_code_data_error(runner, config_path, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    result = runner.invoke(cli, ["train", "--config", config_path,
                                 "--logs", str(empty), "--out", str(tmp_path / "c.npz")])
    assert result.exit_code == 3


def test_resume_continues_identically(runner, config_path, tmp_path):
    log = str(tmp_path / "log.jsonl")
    _collect(runner, config_path, log, episodes=8)
    ckpt = str(tmp_path / "ckpt.npz")
    result = runner.invoke(cli, ["train", "--config", config_path, "--logs", log, "--out", ckpt])
    assert result.exit_code == 0, result.output
    for target in ("resume-a.npz", "resume-b.npz"):
        result = runner.invoke(cli, ["train", "--config", config_path, "--logs", log,
                                     "--out", str(tmp_path / target), "--resume", ckpt,
                                     "--max-epochs", "2"])
        assert result.exit_code == 0, result.output
    a = (tmp_path / "resume-a.loss.csv").read_text()
    b = (tmp_path / "resume-b.loss.csv").read_text()
    assert a == b
