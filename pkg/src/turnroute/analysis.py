"""Aggregate metrics and trajectory diagnostics over logged episodes.

All metrics are pure functions of the logs; the report writer emits CSV
tables plus a machine-readable run_meta.json. Every number here is designed
to be reproducible by a plain brute-force pass over the raw JSONL.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .detect import normalize_score
from .exceptions import DataError
from .trajectory import Trajectory

DEFAULT_N_PHASES = 3


def count_switches(trajectory: Trajectory) -> int:
    turns = trajectory.turns
    return sum(1 for t in range(1, len(turns)) if turns[t].model_id != turns[t - 1].model_id)


def default_action_type(action: str) -> str:
    """Action type of a logged action: its leading token."""
    parts = action.split(None, 1)
    return parts[0] if parts else ""


def make_success_predicate(score_range: tuple[float, float]) -> Callable[[Trajectory], bool]:
    """Successful episode: completed, or normalized score >= 0.99."""

    def predicate(trajectory: Trajectory) -> bool:
        if trajectory.termination == "completed":
            return True
        return normalize_score(trajectory.terminal_score, score_range) >= 0.99

    return predicate


@dataclass(frozen=True)
class EvalSummary:
    mean_score: float
    score_std: float
    total_cost: float
    episodes: int
    mean_turns: float
    mean_switches: float


def summarize(runs: Sequence[Sequence[Trajectory]], score_range: tuple[float, float]) -> EvalSummary:
    """Mean/std of normalized score across run-level means; cost summed over
    every episode; turns and switches averaged over the pooled episodes."""
    if not runs or any(len(run) == 0 for run in runs):
        raise DataError("summarize requires at least one non-empty run")
    run_means = [
        float(np.mean([normalize_score(t.terminal_score, score_range) for t in run]))
        for run in runs
    ]
    episodes = [t for run in runs for t in run]
    return EvalSummary(
        mean_score=float(np.mean(run_means)),
        score_std=float(np.std(run_means)),
        total_cost=sum(t.cumulative_cost() for t in episodes),
        episodes=len(episodes),
        mean_turns=float(np.mean([len(t.turns) for t in episodes])),
        mean_switches=float(np.mean([count_switches(t) for t in episodes])),
    )


@dataclass(frozen=True)
class SwitchCurve:
    """Per-episode (cumulative switches, cumulative cost) paths over successful
    episodes, plus the pooled curve: for each switch count k, the mean cost at
    which episodes first reached k switches (with how many episodes did)."""

    per_episode: tuple[tuple[tuple[int, float], ...], ...]
    pooled: tuple[tuple[int, float, int], ...]


def switch_curve(
    trajectories: Sequence[Trajectory], success: Callable[[Trajectory], bool]
) -> SwitchCurve:
    per_episode = []
    for trajectory in trajectories:
        if not success(trajectory) or not trajectory.turns:
            continue
        points = []
        switches = 0
        cost = 0.0
        previous = None
        for turn in trajectory.turns:
            if previous is not None and turn.model_id != previous:
                switches += 1
            previous = turn.model_id
            cost += turn.cost
            points.append((switches, cost))
        per_episode.append(tuple(points))

    first_cost_at: dict[int, list[float]] = {}
    for points in per_episode:
        seen: set[int] = set()
        for switches, cost in points:
            if switches not in seen:
                seen.add(switches)
                first_cost_at.setdefault(switches, []).append(cost)
    pooled = tuple(
        (k, float(np.mean(first_cost_at[k])), len(first_cost_at[k]))
        for k in sorted(first_cost_at)
    )
    return SwitchCurve(per_episode=tuple(per_episode), pooled=pooled)


@dataclass(frozen=True)
class ErrorStats:
    """Conditional frequencies after an error turn with a successor turn."""

    p_switch: float
    p_recover: float
    p_stay: float
    n_conditioning: int
    defined: bool


def error_switch_recovery(trajectories: Sequence[Trajectory]) -> ErrorStats:
    """P(switch at t+1 | error at t), P(no error at t+1 | error at t), and
    P(stay | error). Errors on an episode's final turn have no successor and
    are excluded from the conditioning set."""
    n = switched = recovered = 0
    for trajectory in trajectories:
        turns = trajectory.turns
        for t in range(len(turns) - 1):
            if not turns[t].errors:
                continue
            n += 1
            if turns[t + 1].model_id != turns[t].model_id:
                switched += 1
            if not turns[t + 1].errors:
                recovered += 1
    if n == 0:
        return ErrorStats(math.nan, math.nan, math.nan, 0, defined=False)
    return ErrorStats(switched / n, recovered / n, 1.0 - switched / n, n, defined=True)


@dataclass(frozen=True)
class PhaseUsage:
    model_ids: tuple[str, ...]
    frequencies: np.ndarray  # (n_phases, n_models); rows with turns sum to 1
    counts: tuple[int, ...]  # turns per phase


def usage_by_phase(trajectories: Sequence[Trajectory], n_phases: int = DEFAULT_N_PHASES) -> PhaseUsage:
    """Assign each turn to phase floor(t * n_phases / T) and tabulate model
    frequencies per phase. Phases with no turns keep all-zero rows."""
    if n_phases < 1:
        raise DataError("n_phases must be >= 1")
    model_ids = sorted({turn.model_id for t in trajectories for turn in t.turns})
    index = {mid: i for i, mid in enumerate(model_ids)}
    counts = np.zeros((n_phases, len(model_ids)), dtype=np.int64)
    for trajectory in trajectories:
        length = len(trajectory.turns)
        for turn in trajectory.turns:
            phase = (turn.t * n_phases) // length
            counts[phase, index[turn.model_id]] += 1
    totals = counts.sum(axis=1)
    frequencies = np.zeros_like(counts, dtype=np.float64)
    for phase in range(n_phases):
        if totals[phase] > 0:
            frequencies[phase] = counts[phase] / totals[phase]
    return PhaseUsage(tuple(model_ids), frequencies, tuple(int(x) for x in totals))


@dataclass(frozen=True)
class LiftTable:
    """lift(m, a) = P(m | a) / P(m); NaN where the action has no usage."""

    model_ids: tuple[str, ...]
    action_types: tuple[str, ...]
    lift: np.ndarray  # (n_models, n_actions)
    p_model: np.ndarray
    p_action: np.ndarray


def lift_table(
    trajectories: Sequence[Trajectory],
    action_type_of: Callable[[str], str] = default_action_type,
) -> LiftTable:
    pairs = [
        (turn.model_id, action_type_of(turn.action))
        for trajectory in trajectories
        for turn in trajectory.turns
    ]
    if not pairs:
        raise DataError("lift_table requires logs with at least one turn")
    model_ids = tuple(sorted({m for m, _ in pairs}))
    action_types = tuple(sorted({a for _, a in pairs}))
    m_index = {m: i for i, m in enumerate(model_ids)}
    a_index = {a: i for i, a in enumerate(action_types)}
    joint = np.zeros((len(model_ids), len(action_types)))
    for model_id, action_type in pairs:
        joint[m_index[model_id], a_index[action_type]] += 1
    total = joint.sum()
    p_model = joint.sum(axis=1) / total
    p_action = joint.sum(axis=0) / total
    lift = np.full_like(joint, math.nan)
    for ai in range(len(action_types)):
        action_total = joint[:, ai].sum()
        if action_total == 0:
            continue
        for mi in range(len(model_ids)):
            if p_model[mi] > 0:
                lift[mi, ai] = (joint[mi, ai] / action_total) / p_model[mi]
    return LiftTable(model_ids, action_types, lift, p_model, p_action)


# ---------------------------------------------------------------------------
# Report bundle
# ---------------------------------------------------------------------------


@dataclass
class ReportBundle:
    summary: EvalSummary
    curve: SwitchCurve
    errors: ErrorStats
    phases: PhaseUsage
    lifts: LiftTable
    n_phases: int = DEFAULT_N_PHASES


def analyze_logs(
    runs: Sequence[Sequence[Trajectory]],
    score_range: tuple[float, float],
    n_phases: int = DEFAULT_N_PHASES,
) -> ReportBundle:
    episodes = [t for run in runs for t in run]
    return ReportBundle(
        summary=summarize(runs, score_range),
        curve=switch_curve(episodes, make_success_predicate(score_range)),
        errors=error_switch_recovery(episodes),
        phases=usage_by_phase(episodes, n_phases),
        lifts=lift_table(episodes),
        n_phases=n_phases,
    )


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_summary_csv(path, rows: dict[str, EvalSummary]) -> None:
    _write_csv(
        path,
        ["policy", "mean_score", "score_std", "total_cost", "episodes", "mean_turns", "mean_switches"],
        [
            [name, s.mean_score, s.score_std, s.total_cost, s.episodes, s.mean_turns, s.mean_switches]
            for name, s in rows.items()
        ],
    )


def write_bundle(bundle: ReportBundle, outdir, run_meta: dict, policy_name: str = "logs") -> None:
    """Write the CSV report bundle (and run metadata) into ``outdir``."""
    import os

    os.makedirs(outdir, exist_ok=True)
    join = lambda name: os.path.join(outdir, name)  # noqa: E731

    write_summary_csv(join("summary.csv"), {policy_name: bundle.summary})

    curve_rows = []
    for k, mean_cost, n in bundle.curve.pooled:
        curve_rows.append(["pooled", "", k, mean_cost, n])
    for i, points in enumerate(bundle.curve.per_episode):
        for switches, cost in points:
            curve_rows.append(["episode", i, switches, cost, ""])
    _write_csv(join("switch_curve.csv"), ["kind", "episode", "switches", "cost", "n"], curve_rows)

    errors = bundle.errors
    _write_csv(
        join("error_stats.csv"),
        ["metric", "value"],
        [
            ["p_switch_after_error", errors.p_switch],
            ["p_recover_after_error", errors.p_recover],
            ["p_stay_after_error", errors.p_stay],
            ["n_conditioning_turns", errors.n_conditioning],
            ["defined", errors.defined],
        ],
    )

    phase_rows = []
    for phase in range(bundle.phases.frequencies.shape[0]):
        for mi, mid in enumerate(bundle.phases.model_ids):
            phase_rows.append(
                [phase, mid, bundle.phases.frequencies[phase, mi], bundle.phases.counts[phase]]
            )
    _write_csv(join("phase_usage.csv"), ["phase", "model", "frequency", "phase_turns"], phase_rows)

    lift_rows = []
    for mi, mid in enumerate(bundle.lifts.model_ids):
        for ai, action in enumerate(bundle.lifts.action_types):
            lift_rows.append(
                [mid, action, bundle.lifts.lift[mi, ai], bundle.lifts.p_model[mi], bundle.lifts.p_action[ai]]
            )
    _write_csv(join("lift.csv"), ["model", "action_type", "lift", "p_model", "p_action"], lift_rows)

    with open(join("run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(run_meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
