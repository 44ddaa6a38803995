"""Glue between logs, targets, features, training, and evaluation.

This is where trajectories become supervised examples: per-turn targets from
the error-penalty module, history embeddings from the active provider, one
example per logged turn.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .detect import PenaltyConfig, outcome_targets
from .encoding import serialize_history
from .estimator import TrainExample
from .exceptions import DataError
from .trajectory import Trajectory, replay

EMBED_BATCH = 512


def build_examples(
    trajectories: Iterable[Trajectory],
    provider,
    penalty: PenaltyConfig,
    score_range: tuple[float, float],
    history_token_budget: int,
    no_history: bool = False,
) -> list[TrainExample]:
    """One training example per logged turn: (z_x, chosen model, target)."""
    texts: list[str] = []
    model_ids: list[str] = []
    targets: list[float] = []
    for trajectory in trajectories:
        turn_targets = outcome_targets(trajectory, penalty, score_range)
        for t, turn in enumerate(trajectory.turns):
            task_text, prefix = replay(trajectory, t)
            history = serialize_history(
                task_text, [] if no_history else prefix, history_token_budget, provider.count
            )
            texts.append(history.text)
            model_ids.append(turn.model_id)
            targets.append(turn_targets[t])
    if not texts:
        raise DataError("no training examples: logs contain no turns")

    embeddings = np.empty((len(texts), provider.dim), dtype=np.float64)
    for start in range(0, len(texts), EMBED_BATCH):
        chunk = texts[start:start + EMBED_BATCH]
        embeddings[start:start + len(chunk)] = provider.embed(chunk)

    return [
        TrainExample(z_x=embeddings[i], model_id=model_ids[i], target=targets[i])
        for i in range(len(texts))
    ]


def split_by_trajectory(
    trajectories: Sequence[Trajectory], val_fraction: float, seed: int
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Hold out whole trajectories for validation, shuffled by the run seed."""
    if not 0.0 < val_fraction < 1.0:
        raise DataError("val_fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(trajectories))
    n_val = max(1, int(round(len(trajectories) * val_fraction)))
    if n_val >= len(trajectories):
        raise DataError("validation split would consume every trajectory")
    val_idx = set(order[:n_val].tolist())
    train = [trajectories[i] for i in range(len(trajectories)) if i not in val_idx]
    val = [trajectories[i] for i in range(len(trajectories)) if i in val_idx]
    return train, val


@dataclass
class Dataset:
    train: list[TrainExample]
    val: list[TrainExample]
    n_trajectories: int


def dataset_from_logs(
    log_trajectories: Sequence[Trajectory],
    provider,
    penalty: PenaltyConfig,
    score_range: tuple[float, float],
    history_token_budget: int,
    val_fraction: float = 0.2,
    seed: int = 0,
    no_history: bool = False,
) -> Dataset:
    train_trajs, val_trajs = split_by_trajectory(list(log_trajectories), val_fraction, seed)
    make = lambda trajs: build_examples(  # noqa: E731
        trajs, provider, penalty, score_range, history_token_budget, no_history
    )
    return Dataset(train=make(train_trajs), val=make(val_trajs), n_trajectories=len(log_trajectories))
