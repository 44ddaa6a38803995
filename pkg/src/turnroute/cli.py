"""Command-line interface: collect, train, evaluate, analyze, export-embeddings.

Every subcommand is reproducible from (config digest, seed); run_meta.json
records both. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure, 5 I/O or transport failure.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys

import click
import numpy as np

from .analysis import analyze_logs, summarize, write_bundle, write_summary_csv
from .config import RunConfig, ResolvedRun, load_run_config, resolve_run
from .estimator import RidgeNet, load_checkpoint, save_checkpoint
from .estimator import train as train_estimator
from .exceptions import ConfigError, DataError, TurnrouteError
from .figures import render_figures
from .pipeline import dataset_from_logs
from .pool import pool_digest
from .routing import (
    EpisodeLevelPolicy,
    LearnedPolicy,
    RandomPolicy,
    SingleModelPolicy,
    collect as run_collect,
)
from .simenv import SyntheticEnv
from .trajectory import read_jsonl


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TurnrouteError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


def _load_config(config_path) -> RunConfig:
    if config_path is None:
        return RunConfig()
    return load_run_config(config_path)


def _make_env_factory(run: ResolvedRun):
    return lambda: SyntheticEnv(run.bundle.world, run.bundle.skill, run.ruleset)


def _policy_factory(spec: str, run: ResolvedRun, checkpoint_path, no_history: bool):
    """Factory of fresh policy instances for one policy spec string."""
    if spec == "random":
        return lambda: RandomPolicy()
    if spec.startswith("single:"):
        model_id = spec[len("single:"):]
        if model_id not in {d.id for d in run.pool}:
            raise ConfigError(f"policy {spec!r}: model not in the world's pool")
        return lambda: SingleModelPolicy(model_id)
    if spec in ("learned", "episode"):
        if checkpoint_path is None:
            raise ConfigError(f"policy {spec!r} requires --checkpoint")
        net, _ = load_checkpoint(checkpoint_path, run.pool, run.provider.dim)
        if spec == "learned":
            return lambda: LearnedPolicy(net, run.provider)
        return lambda: EpisodeLevelPolicy(net, run.provider)
    raise ConfigError(f"unknown policy spec {spec!r}")


def _expand_policies(specs: str, run: ResolvedRun) -> list[str]:
    out = []
    for spec in (s.strip() for s in specs.split(",")):
        if not spec:
            continue
        if spec == "single:*":
            out.extend(f"single:{d.id}" for d in run.pool)
        else:
            out.append(spec)
    if not out:
        raise ConfigError("no policies requested")
    return out


def _safe_name(spec: str) -> str:
    return spec.replace(":", "-").replace("*", "all").replace("/", "_")


def _run_seed(seed: int, run_index: int) -> int:
    return int(np.random.SeedSequence((seed, 7, run_index)).generate_state(1)[0])


@click.group()
def cli():
    """Budget-aware turn-level model routing over synthetic multi-turn worlds."""


@cli.command("collect")
@click.option("--config", "config_path", type=click.Path(), default=None, help="Run config TOML.")
@click.option("--policy", default="random", show_default=True,
              help="random | single:<id> | learned | episode")
@click.option("--episodes", default=100, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True,
              help="Episode-level parallelism (log bytes are order-independent).")
@guarded
def collect_cmd(config_path, policy, episodes, seed, checkpoint_path, out_path, jobs):
    """Run episodes under one policy and append trajectories to a JSONL log."""
    run = resolve_run(_load_config(config_path), seed=seed)
    factory = _policy_factory(policy, run, checkpoint_path, no_history=False)
    summary = run_collect(
        _make_env_factory(run), factory(), episodes, run.pool, run.episode,
        run.config.seed, run.ruleset, out_path, counter=run.provider.count,
        policy_factory=factory, jobs=jobs,
    )
    click.echo(
        f"collected {summary.episodes} episodes, {summary.turns} turns, "
        f"total cost ${summary.total_cost:.6f}"
    )
    for reason in sorted(summary.terminations):
        click.echo(f"  {reason}: {summary.terminations[reason]}")


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--logs", "log_paths", multiple=True, required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--val-fraction", default=0.2, show_default=True)
@click.option("--max-epochs", type=int, default=None, help="Override train.max_epochs.")
@click.option("--resume", "resume_path", type=click.Path(), default=None,
              help="Continue training from a checkpoint.")
@click.option("--no-error-penalty", is_flag=True, help="Ablation: targets without error penalties.")
@click.option("--no-history", is_flag=True, help="Ablation: features from the task block only.")
@click.option("--hardcoded-model-encoder", is_flag=True,
              help="Ablation: raw attribute features instead of the learned encoder.")
@click.option("--ridge", is_flag=True, help="Ablation: closed-form linear head instead of the MLP.")
@click.option("--dry-run", is_flag=True, help="Validate shapes and train 0 epochs.")
@guarded
def train_cmd(config_path, log_paths, out_path, seed, val_fraction, max_epochs,
              resume_path, no_error_penalty, no_history, hardcoded_model_encoder, ridge, dry_run):
    """Fit the outcome estimator on logged trajectories and write a checkpoint."""
    overrides = {"max_epochs": max_epochs} if max_epochs is not None else None
    run = resolve_run(
        _load_config(config_path), seed=seed,
        no_error_penalty=no_error_penalty, train_overrides=overrides,
    )
    trajectories = [t for path in log_paths for t in read_jsonl(path)]
    if not trajectories:
        raise DataError("no trajectories found in the given logs")
    dataset = dataset_from_logs(
        trajectories, run.provider, run.penalty, run.bundle.world.score_range,
        run.episode.history_token_budget, val_fraction=val_fraction,
        seed=run.config.seed, no_history=no_history,
    )
    click.echo(
        f"dataset: {dataset.n_trajectories} trajectories, "
        f"{len(dataset.train)} train / {len(dataset.val)} val examples, "
        f"dim {run.provider.dim}"
    )
    if dry_run:
        click.echo("dry run: skipping training and checkpoint write")
        return

    if ridge:
        net = RidgeNet(run.pool, run.provider.dim)
        net.fit(dataset.train)
        history = []
    else:
        init_net = None
        if resume_path is not None:
            init_net, _ = load_checkpoint(resume_path, run.pool, run.provider.dim)
        net, history = train_estimator(
            dataset.train, dataset.val, run.pool, run.train_config,
            init_net=init_net,
            encoder_mode="hardcoded" if hardcoded_model_encoder else "learned",
        )

    save_checkpoint(net, out_path, run.train_config)
    loss_path = os.path.splitext(out_path)[0] + ".loss.csv"
    with open(loss_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "learning_rate", "train_loss", "val_loss"])
        writer.writerows([[h.epoch, h.learning_rate, h.train_loss, h.val_loss] for h in history])
    if history:
        best = min(h.val_loss for h in history)
        click.echo(
            f"trained {len(history)} epochs; best validation loss {best:.6f}; "
            f"stopped at epoch {history[-1].epoch}"
        )
    else:
        click.echo("fitted ridge head in closed form")
    click.echo(f"checkpoint written to {out_path}")


@cli.command("evaluate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@click.option("--policies", default="learned,random,single:*", show_default=True)
@click.option("--episodes", default=100, show_default=True)
@click.option("--runs", default=3, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--budget-scale", default="1.0", show_default=True,
              help="Comma-separated budget multipliers; one report per scale.")
@click.option("--history-budget", type=int, default=None,
              help="Override the history token budget (sensitivity sweeps).")
@click.option("--no-history", is_flag=True, help="Route on the task block only.")
@click.option("--phases", default=3, show_default=True)
@click.option("--jobs", default=1, show_default=True)
@click.option("--figures/--no-figures", "with_figures", default=True, show_default=True)
@guarded
def evaluate_cmd(config_path, checkpoint_path, policies, episodes, runs, seed, out_dir,
                 budget_scale, history_budget, no_history, phases, jobs, with_figures):
    """Run each policy for runs x episodes with disjoint seeds; write reports."""
    scales = [float(s) for s in budget_scale.split(",") if s.strip()]
    config = _load_config(config_path)
    for scale in scales:
        run = resolve_run(
            config, seed=seed, budget_scale=scale, history_budget=history_budget
        )
        scale_dir = out_dir if len(scales) == 1 else os.path.join(out_dir, f"budget-{scale:g}x")
        os.makedirs(scale_dir, exist_ok=True)
        score_range = run.bundle.world.score_range
        summaries = {}
        for spec in _expand_policies(policies, run):
            factory = _policy_factory(spec, run, checkpoint_path, no_history)
            policy_dir = os.path.join(scale_dir, _safe_name(spec))
            os.makedirs(policy_dir, exist_ok=True)
            run_logs = []
            for r in range(runs):
                log_path = os.path.join(policy_dir, f"run{r}.jsonl")
                run_collect(
                    _make_env_factory(run), factory(), episodes, run.pool, run.episode,
                    _run_seed(run.config.seed, r), run.ruleset, log_path,
                    counter=run.provider.count, no_history=no_history,
                    policy_factory=factory, jobs=jobs,
                )
                run_logs.append(list(read_jsonl(log_path)))
            summaries[spec] = summarize(run_logs, score_range)
            bundle = analyze_logs(run_logs, score_range, phases)
            meta = _run_meta(run, episodes=episodes, runs=runs, policy=spec)
            write_bundle(bundle, policy_dir, meta, policy_name=spec)
            if with_figures:
                render_figures(bundle, policy_dir)
        write_summary_csv(os.path.join(scale_dir, "summary.csv"), summaries)
        with open(os.path.join(scale_dir, "run_meta.json"), "w", encoding="utf-8") as fh:
            json.dump(_run_meta(run, episodes=episodes, runs=runs,
                                policies=sorted(summaries)), fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"budget x{scale:g}  (B = ${run.episode.budget:.6f})")
        for name, s in summaries.items():
            click.echo(
                f"  {name:<28} score {s.mean_score:.4f} +- {s.score_std:.4f}  "
                f"cost ${s.total_cost:.6f}  turns {s.mean_turns:.2f}  switches {s.mean_switches:.2f}"
            )


def _run_meta(run: ResolvedRun, **extra) -> dict:
    return {
        "config_digest": run.config.digest(),
        "seed": run.config.seed,
        "pool_digest": pool_digest(run.pool),
        "world": run.bundle.world.name,
        "provider_dim": run.provider.dim,
        "budget": run.episode.budget,
        "t_max": run.episode.t_max,
        "history_token_budget": run.episode.history_token_budget,
        **extra,
    }


@cli.command("analyze")
@click.option("--logs", "log_paths", multiple=True, required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--phases", default=3, show_default=True)
@click.option("--score-range", default="0,1", show_default=True,
              help="lo,hi of the environment's terminal score.")
@click.option("--figures/--no-figures", "with_figures", default=True, show_default=True)
@guarded
def analyze_cmd(log_paths, out_dir, phases, score_range, with_figures):
    """Produce the diagnostic report bundle from existing JSONL logs."""
    lo, hi = (float(x) for x in score_range.split(","))
    runs = [list(read_jsonl(path)) for path in log_paths]
    bundle = analyze_logs(runs, (lo, hi), phases)
    meta = {"logs": [str(p) for p in log_paths], "score_range": [lo, hi], "phases": phases}
    write_bundle(bundle, out_dir, meta)
    if with_figures:
        render_figures(bundle, out_dir)
    s = bundle.summary
    click.echo(
        f"{s.episodes} episodes: score {s.mean_score:.4f} +- {s.score_std:.4f}, "
        f"cost ${s.total_cost:.6f}, switches {s.mean_switches:.2f}"
    )


@cli.command("export-embeddings")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@guarded
def export_embeddings_cmd(config_path, checkpoint_path, out_path):
    """Export the learned per-model embeddings (one row per pool model)."""
    run = resolve_run(_load_config(config_path))
    net, _ = load_checkpoint(checkpoint_path, run.pool, run.provider.dim)
    embeddings = net.model_embeddings()
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id"] + [f"e{i}" for i in range(embeddings.shape[1])])
        for mid, row in zip(net.ids, embeddings):
            writer.writerow([mid] + [repr(float(v)) for v in row])
    click.echo(f"wrote {embeddings.shape[0]} x {embeddings.shape[1]} embeddings to {out_path}")


def main():
    cli()


if __name__ == "__main__":
    main()
