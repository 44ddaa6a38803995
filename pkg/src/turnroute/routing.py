"""Turn-level policy evaluation, budget/turn-limited episodes, and collection.

The budget check runs after each turn (a turn's cost is only known once the
model has been invoked), so cumulative cost may overshoot the budget by at
most one turn's cost and is strictly below it before the final turn.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field

import numpy as np

from .detect import ErrorRule, detect
from .encoding import DEFAULT_HISTORY_TOKEN_BUDGET, HistoryText, serialize_history
from .exceptions import DataError, TransportError, TurnrouteError
from .pool import ModelDescriptor, pool_by_id, turn_cost
from .trajectory import Trajectory, Turn, trajectory_record

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeConfig:
    budget: float = 2.0
    t_max: int = 50
    history_token_budget: int = DEFAULT_HISTORY_TOKEN_BUDGET

    def __post_init__(self):
        if self.budget <= 0:
            raise DataError("episode budget must be positive")
        if self.t_max < 1:
            raise DataError("t_max must be >= 1")


def argmax_with_ties(scores: np.ndarray, pool: list[ModelDescriptor]) -> str:
    """Highest-scoring model; ties go to the lower blended price, then the id."""
    best = np.max(scores)
    tied = [pool[i] for i in range(len(pool)) if scores[i] == best]
    winner = min(tied, key=lambda d: (d.blended_price, d.id))
    return winner.id


class RandomPolicy:
    """Uniform selection from a seeded stream, re-seeded per episode."""

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)

    def start_episode(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def select(self, history: HistoryText, pool: list[ModelDescriptor]) -> str:
        if not pool:
            raise DataError("cannot select from an empty pool")
        return pool[int(self._rng.integers(len(pool)))].id


class SingleModelPolicy:
    def __init__(self, model_id: str):
        self.model_id = model_id

    def start_episode(self, rng: np.random.Generator) -> None:
        pass

    def select(self, history: HistoryText, pool: list[ModelDescriptor]) -> str:
        if all(d.id != self.model_id for d in pool):
            raise DataError(f"single-model policy references {self.model_id!r}, not in pool")
        return self.model_id


class LearnedPolicy:
    """Argmax of the outcome estimator over candidates; the history embedding
    is computed once per turn and shared across candidates.

    Providers that declare ``single_flight = True`` get their embed calls
    serialized through a shared lock (relevant only under ``--jobs``)."""

    _single_flight_lock = threading.Lock()

    def __init__(self, net, provider):
        self.net = net
        self.provider = provider
        self._serialize_calls = bool(getattr(provider, "single_flight", False))

    def start_episode(self, rng: np.random.Generator) -> None:
        pass

    def select(self, history: HistoryText, pool: list[ModelDescriptor]) -> str:
        if not pool:
            raise DataError("cannot select from an empty pool")
        if self._serialize_calls:
            with self._single_flight_lock:
                z_x = self.provider.embed([history.text])[0]
        else:
            z_x = self.provider.embed([history.text])[0]
        scores = self.net.score_candidates(z_x)
        return argmax_with_ties(scores, pool)


class EpisodeLevelPolicy(LearnedPolicy):
    """Single-turn ablation: learned selection at t=0, cached for the episode."""

    def __init__(self, net, provider):
        super().__init__(net, provider)
        self._cached: str | None = None

    def start_episode(self, rng: np.random.Generator) -> None:
        self._cached = None

    def select(self, history: HistoryText, pool: list[ModelDescriptor]) -> str:
        if self._cached is None:
            self._cached = super().select(history, pool)
        return self._cached


def select(policy, history: HistoryText, pool: list[ModelDescriptor]) -> str:
    """Module-level form of policy selection (delegates to the policy)."""
    return policy.select(history, pool)


def run_episode(
    env,
    policy,
    pool: list[ModelDescriptor],
    config: EpisodeConfig,
    seed: int,
    ruleset: list[ErrorRule],
    counter=None,
    no_history: bool = False,
) -> Trajectory:
    """Run one episode: serialize -> select -> step -> append -> check limits.

    ``counter`` is the active provider's token counter (defaults to whitespace
    counting). ``no_history`` serializes the task block only, for the
    history-free ablation.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x9E3779B9)))
    task_text = env.reset(seed)
    policy.start_episode(rng)
    trajectory = Trajectory(task_id=env.task_id, task_text=task_text, seed=seed)

    cumulative = 0.0
    by_id = pool_by_id(pool)
    for t in range(config.t_max):
        visible_turns = [] if no_history else trajectory.turns
        history = serialize_history(
            task_text, visible_turns, config.history_token_budget, counter
        )
        try:
            model_id = policy.select(history, pool)
            raw_output, action, observation, tokens_in, tokens_out, done = env.step(model_id)
        except TurnrouteError as exc:
            logger.error("episode %s aborted at turn %d: %s", trajectory.task_id, t, exc)
            trajectory.termination = "aborted"
            trajectory.terminal_score = env.terminal_score()
            return trajectory

        cost = turn_cost(by_id[model_id], tokens_in, tokens_out)
        events = detect(observation, ruleset)
        trajectory.append_turn(
            Turn(t, model_id, raw_output, action, observation,
                 tokens_in, tokens_out, cost, tuple(events))
        )
        cumulative += cost

        if done:
            trajectory.termination = "completed"
            break
        if cumulative >= config.budget:
            trajectory.termination = "budget_exhausted"
            break
        if t + 1 == config.t_max:
            trajectory.termination = "turn_limit"
            break

    trajectory.terminal_score = env.terminal_score()
    return trajectory


@dataclass
class CollectSummary:
    episodes: int = 0
    turns: int = 0
    total_cost: float = 0.0
    terminations: dict[str, int] = field(default_factory=dict)

    def add(self, trajectory: Trajectory) -> None:
        self.episodes += 1
        self.turns += len(trajectory.turns)
        self.total_cost += trajectory.cumulative_cost()
        self.terminations[trajectory.termination] = (
            self.terminations.get(trajectory.termination, 0) + 1
        )


def episode_seed(seed: int, index: int) -> int:
    """Stable per-episode seed derived from the run seed and episode index."""
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


def collect(
    make_env,
    policy,
    n_episodes: int,
    pool: list[ModelDescriptor],
    config: EpisodeConfig,
    seed: int,
    ruleset: list[ErrorRule],
    path,
    counter=None,
    no_history: bool = False,
    policy_factory=None,
    jobs: int = 1,
) -> CollectSummary:
    """Run ``n_episodes`` with derived per-episode seeds, streaming to JSONL.

    With ``jobs > 1`` (and a ``policy_factory`` supplying a fresh policy per
    episode) episodes run in a thread pool; records are still written in
    episode order, so the log bytes are identical to a sequential run. On an
    I/O failure the partially written log is preserved and the error reports
    how many episodes completed.
    """
    if n_episodes < 1:
        raise DataError("n_episodes must be >= 1")
    summary = CollectSummary()

    def one(index: int, episode_policy) -> Trajectory:
        return run_episode(
            make_env(), episode_policy, pool, config, episode_seed(seed, index), ruleset,
            counter=counter, no_history=no_history,
        )

    with open(path, "w", encoding="utf-8") as fh:

        def emit(trajectory: Trajectory) -> None:
            try:
                fh.write(json.dumps(trajectory_record(trajectory)))
                fh.write("\n")
            except OSError as exc:
                raise TransportError(
                    f"log write failed after {summary.episodes} episodes: {exc}"
                ) from exc
            summary.add(trajectory)

        if jobs > 1 and policy_factory is not None:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as executor:
                futures = [
                    executor.submit(one, index, policy_factory()) for index in range(n_episodes)
                ]
                for future in futures:
                    emit(future.result())
        else:
            for index in range(n_episodes):
                emit(one(index, policy))
    return summary
