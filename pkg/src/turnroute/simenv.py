"""Seeded synthetic multi-turn environment with simulated model behaviors.

A world is an ordered list of subgoals, each tagged with an action type.
Each step, the selected model completes the current subgoal with a
per-(model, action-type) success probability; failures optionally embed a
canonical trigger phrase for a named error rule. Token usage grows with
history length so cost budgets bind realistically. Everything is a pure
function of (world, skills, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detect import ErrorRule
from .exceptions import ConfigError, DataError, ProtocolError
from .pool import ModelDescriptor, pool_by_id, turn_cost
from .routing import EpisodeConfig

ACTION_TYPES = ("navigate", "manipulate", "query", "compute")


@dataclass(frozen=True)
class Subgoal:
    action_type: str
    description: str

    def __post_init__(self):
        if self.action_type not in ACTION_TYPES:
            raise ConfigError(f"unknown action type {self.action_type!r}")


@dataclass(frozen=True)
class WorldSpec:
    name: str
    subgoals: tuple[Subgoal, ...]
    error_prob_on_failure: float
    error_rule_pool: tuple[str, ...]
    score_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not self.subgoals:
            raise ConfigError(f"world {self.name!r}: at least one subgoal required")
        if not 0.0 <= self.error_prob_on_failure <= 1.0:
            raise ConfigError(f"world {self.name!r}: error_prob_on_failure outside [0, 1]")
        if self.error_prob_on_failure > 0.0 and not self.error_rule_pool:
            raise ConfigError(f"world {self.name!r}: error_rule_pool empty but errors enabled")


@dataclass(frozen=True)
class TokenModel:
    base_in: int
    growth: int
    mean_out: int

    def __post_init__(self):
        if self.base_in <= 0 or self.growth < 0 or self.mean_out <= 0:
            raise ConfigError("token parameters must be positive")


@dataclass(frozen=True)
class SkillMatrix:
    """Per-(model, action type) success probabilities and token-usage models."""

    success: dict[str, dict[str, float]]
    tokens: dict[str, TokenModel]

    def __post_init__(self):
        for model_id, row in self.success.items():
            for action_type, p in row.items():
                if not 0.0 <= p <= 1.0:
                    raise ConfigError(
                        f"skill probability for ({model_id}, {action_type}) outside [0, 1]"
                    )
            if model_id not in self.tokens:
                raise ConfigError(f"model {model_id!r} has skills but no token model")

    @property
    def model_ids(self) -> list[str]:
        return list(self.success.keys())


def rule_trigger(rule: ErrorRule) -> str:
    """Canonical observation fragment that fires exactly this rule."""
    literal = rule.first_literal_pattern()
    if literal is None:
        raise ConfigError(f"rule {rule.name!r} has no literal pattern to emit")
    return f"Tool reported: {literal}."


class SyntheticEnv:
    """Single-episode environment instance; exclusively owned by its runner."""

    def __init__(self, world: WorldSpec, skill: SkillMatrix, ruleset: Sequence[ErrorRule]):
        self.world = world
        self.skill = skill
        rules_by_name = {rule.name: rule for rule in ruleset}
        missing = [name for name in world.error_rule_pool if name not in rules_by_name]
        if missing:
            raise ConfigError(f"world {world.name!r} references unknown rules: {missing}")
        self._triggers = [rule_trigger(rules_by_name[name]) for name in world.error_rule_pool]
        self._rng: np.random.Generator | None = None
        self.task_id = ""
        self.subgoal_index = 0
        self.turns_taken = 0
        self._done = False

    def reset(self, seed: int) -> str:
        self._rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5E_ED)))
        self.task_id = f"{self.world.name}-ep{seed}"
        self.subgoal_index = 0
        self.turns_taken = 0
        self._done = False
        lines = [
            f"World '{self.world.name}': finish {len(self.world.subgoals)} subgoals in order."
        ]
        for i, sub in enumerate(self.world.subgoals):
            lines.append(f"{i}. ({sub.action_type}) {sub.description}")
        return "\n".join(lines)

    @property
    def current_action_type(self) -> str:
        return self.world.subgoals[self.subgoal_index].action_type

    def step(self, model_id: str) -> tuple[str, str, str, int, int, bool]:
        """One invocation of ``model_id``: returns (raw_output, action,
        observation, tokens_in, tokens_out, done)."""
        if self._rng is None:
            raise ProtocolError("step called before reset")
        if self._done:
            raise ProtocolError("step called after the episode completed")
        if model_id not in self.skill.success:
            raise DataError(f"model {model_id!r} has no skill entry in this world")

        idx = self.subgoal_index
        sub = self.world.subgoals[idx]
        action = f"{sub.action_type} {sub.description}"
        raw_output = (
            f"THOUGHT: subgoal {idx} calls for a {sub.action_type} step.\nACTION: {action}"
        )

        success = self._rng.random() < self.skill.success[model_id][sub.action_type]
        if success:
            self.subgoal_index += 1
            if self.subgoal_index == len(self.world.subgoals):
                self._done = True
                observation = (
                    f"Subgoal {idx} ({sub.action_type}) complete: {sub.description} succeeded. "
                    f"All subgoals are finished."
                )
            else:
                upcoming = self.world.subgoals[self.subgoal_index]
                observation = (
                    f"Subgoal {idx} ({sub.action_type}) complete: {sub.description} succeeded. "
                    f"Next up is subgoal {self.subgoal_index} ({upcoming.action_type}): "
                    f"{upcoming.description}."
                )
        else:
            emit_error = self._rng.random() < self.world.error_prob_on_failure
            if emit_error:
                trigger = self._triggers[int(self._rng.integers(len(self._triggers)))]
                observation = f"Subgoal {idx} ({sub.action_type}) attempt failed. {trigger}"
            else:
                observation = (
                    f"Subgoal {idx} ({sub.action_type}) made no progress; "
                    f"the attempt left the world unchanged."
                )

        token_model = self.skill.tokens[model_id]
        tokens_in = token_model.base_in + token_model.growth * self.turns_taken
        tokens_out = int(self._rng.poisson(token_model.mean_out))
        self.turns_taken += 1
        return raw_output, action, observation, tokens_in, tokens_out, self._done

    def normalized_score(self) -> float:
        return self.subgoal_index / len(self.world.subgoals)

    def terminal_score(self) -> float:
        lo, hi = self.world.score_range
        return lo + self.normalized_score() * (hi - lo)


# ---------------------------------------------------------------------------
# Oracle: ground-truth per-subgoal assignment plus a Monte Carlo estimate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    best_models: tuple[str, ...]
    expected_score: float
    stderr: float
    n_rollouts: int


def oracle_assignment(
    world: WorldSpec, skill: SkillMatrix, pool: Sequence[ModelDescriptor]
) -> tuple[str, ...]:
    """Best model per subgoal: argmax success probability, cheaper on ties."""
    by_id = pool_by_id(list(pool))
    out = []
    for sub in world.subgoals:
        candidates = sorted(
            skill.model_ids,
            key=lambda mid: (
                -skill.success[mid][sub.action_type],
                by_id[mid].blended_price,
                mid,
            ),
        )
        out.append(candidates[0])
    return tuple(out)


def oracle(
    world: WorldSpec,
    skill: SkillMatrix,
    pool: Sequence[ModelDescriptor],
    config: EpisodeConfig,
    ruleset: Sequence[ErrorRule],
    n_rollouts: int = 10_000,
    seed: int = 0,
) -> OracleResult:
    """Monte Carlo estimate of the per-subgoal best-model policy's mean
    normalized score, under the same budget and turn-limit semantics as
    episode execution. Serves as the brute-force acceptance reference."""
    if n_rollouts < 1:
        raise DataError("n_rollouts must be >= 1")
    assignment = oracle_assignment(world, skill, pool)
    by_id = pool_by_id(list(pool))
    scores = np.empty(n_rollouts)
    for k in range(n_rollouts):
        env = SyntheticEnv(world, skill, ruleset)
        env.reset(int(np.random.SeedSequence((seed, k)).generate_state(1)[0]))
        cumulative = 0.0
        for t in range(config.t_max):
            model_id = assignment[env.subgoal_index]
            _, _, _, tokens_in, tokens_out, done = env.step(model_id)
            cumulative += turn_cost(by_id[model_id], tokens_in, tokens_out)
            if done or cumulative >= config.budget:
                break
        scores[k] = env.normalized_score()
    stderr = float(scores.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return OracleResult(assignment, float(scores.mean()), stderr, n_rollouts)


# ---------------------------------------------------------------------------
# World files and the randomized generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldBundle:
    """A world spec file's full contents: world, skills, pool subset, defaults."""

    world: WorldSpec
    skill: SkillMatrix
    model_ids: tuple[str, ...]
    ruleset_name: str
    episode: EpisodeConfig | None = None


def load_world(path) -> WorldBundle:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"world spec not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"world spec {path}: {exc}") from exc
    try:
        world = WorldSpec(
            name=doc["name"],
            subgoals=tuple(Subgoal(s["type"], s["description"]) for s in doc["subgoals"]),
            error_prob_on_failure=doc["error_prob_on_failure"],
            error_rule_pool=tuple(doc["error_rule_pool"]),
            score_range=tuple(doc.get("score_range", (0.0, 1.0))),
        )
        skill = SkillMatrix(
            success={mid: dict(row) for mid, row in doc["skills"].items()},
            tokens={mid: TokenModel(**row) for mid, row in doc["tokens"].items()},
        )
        episode = None
        if "episode" in doc:
            episode = EpisodeConfig(**doc["episode"])
        return WorldBundle(
            world=world,
            skill=skill,
            model_ids=tuple(doc["models"]),
            ruleset_name=doc["ruleset"],
            episode=episode,
        )
    except KeyError as exc:
        raise ConfigError(f"world spec {path}: missing field {exc}") from exc


def generate_world(
    seed: int,
    model_ids: Sequence[str],
    n_subgoals: int = 6,
    error_rule_pool: Sequence[str] = ("no_known_action",),
    score_range: tuple[float, float] = (0.0, 1.0),
) -> tuple[WorldSpec, SkillMatrix]:
    """Randomized world for property tests: arbitrary types and skill levels."""
    rng = np.random.default_rng(seed)
    subgoals = tuple(
        Subgoal(
            ACTION_TYPES[int(rng.integers(len(ACTION_TYPES)))],
            f"carry out task item {i}",
        )
        for i in range(n_subgoals)
    )
    world = WorldSpec(
        name=f"generated-{seed}",
        subgoals=subgoals,
        error_prob_on_failure=float(rng.uniform(0.0, 0.8)),
        error_rule_pool=tuple(error_rule_pool),
        score_range=score_range,
    )
    skill = SkillMatrix(
        success={
            mid: {t: float(rng.uniform(0.05, 0.95)) for t in ACTION_TYPES} for mid in model_ids
        },
        tokens={
            mid: TokenModel(
                base_in=int(rng.integers(100, 1000)),
                growth=int(rng.integers(10, 200)),
                mean_out=int(rng.integers(50, 500)),
            )
            for mid in model_ids
        },
    )
    return world, skill
