"""Shared fixtures-in-spirit: descriptors, rulesets, and random trajectories."""

from __future__ import annotations

import numpy as np

from turnroute.assets import builtin_ruleset_path
from turnroute.detect import ErrorEvent, load_ruleset
from turnroute.pool import ModelDescriptor, turn_cost
from turnroute.trajectory import Trajectory, Turn

GPT5 = ModelDescriptor("gpt-5", 400_000, 2024, 10, 1.25, 10.0, False)
GPT_OSS = ModelDescriptor("gpt-oss-120b", 131_000, 2024, 6, 0.09, 0.36, True)
GEMINI_LITE = ModelDescriptor("gemini-2.5-flash-lite", 1_000_000, 2025, 1, 0.10, 0.40, False)
KIMI = ModelDescriptor("kimi-k2", 131_000, 2024, 10, 0.39, 1.90, True)

HLE_RULES = load_ruleset(builtin_ruleset_path("hle"))
SW_RULES = load_ruleset(builtin_ruleset_path("scienceworld"))

# Text fragments mixing unicode, quotes, and newlines to stress serialization.
_WORDS = [
    "open", "the", "door", "mix\nthe", "flask", 'say "done"', "Δ-phase", "α2",
    "tab\tseparated", "trailing ", " leading", "émail", "商", "none",
]


def random_text(rng: np.random.Generator, max_words: int = 12) -> str:
    n = int(rng.integers(0, max_words))
    return " ".join(_WORDS[int(rng.integers(len(_WORDS)))] for _ in range(n))


def random_trajectory(
    rng: np.random.Generator,
    pool: list[ModelDescriptor] | None = None,
    max_turns: int = 8,
    score_range: tuple[float, float] = (0.0, 1.0),
    error_rate: float = 0.3,
) -> Trajectory:
    pool = pool or [GPT5, GPT_OSS, GEMINI_LITE]
    n_turns = int(rng.integers(1, max_turns + 1))
    trajectory = Trajectory(
        task_id=f"task-{int(rng.integers(1_000_000))}",
        task_text=random_text(rng) or "do the thing",
        seed=int(rng.integers(2**31)),
        termination=["completed", "turn_limit", "budget_exhausted"][int(rng.integers(3))],
        terminal_score=float(rng.uniform(*score_range)),
    )
    for t in range(n_turns):
        descriptor = pool[int(rng.integers(len(pool)))]
        tokens_in = int(rng.integers(1, 5000))
        tokens_out = int(rng.integers(0, 2000))
        errors = ()
        if rng.random() < error_rate:
            picks = rng.integers(len(HLE_RULES), size=int(rng.integers(1, 3)))
            errors = tuple(
                ErrorEvent(HLE_RULES[i].name, HLE_RULES[i].category, HLE_RULES[i].severity)
                for i in picks
            )
        trajectory.append_turn(
            Turn(
                t=t,
                model_id=descriptor.id,
                raw_output=random_text(rng),
                action=random_text(rng) or "look around",
                observation=random_text(rng),
                tokens_in=tokens_in,
                tokens_out=tokens_out,
                cost=turn_cost(descriptor, tokens_in, tokens_out),
                errors=errors,
            )
        )
    return trajectory
