"""Logged-episode data model, durable JSONL representation, and replay.

One JSONL line holds one whole trajectory; the reader streams records so
corpus-scale logs never need to fit in memory. Floats serialize through
Python's shortest round-trip rendering, so write -> read is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .detect import ErrorEvent
from .exceptions import DataError, TransportError
from .pool import CostLedger

TERMINATIONS = ("completed", "turn_limit", "budget_exhausted", "aborted")


@dataclass(frozen=True)
class Turn:
    """One router decision, model invocation, and environment observation."""

    t: int
    model_id: str
    raw_output: str
    action: str
    observation: str
    tokens_in: int
    tokens_out: int
    cost: float
    errors: tuple[ErrorEvent, ...] = ()


@dataclass
class Trajectory:
    """A complete logged episode. Treated as immutable once finalized."""

    task_id: str
    task_text: str
    seed: int
    termination: str = ""
    terminal_score: float = 0.0
    turns: list[Turn] = field(default_factory=list)

    def append_turn(self, turn: Turn) -> "Trajectory":
        if turn.t != len(self.turns):
            raise DataError(
                f"turn index {turn.t} does not match trajectory length {len(self.turns)}"
            )
        self.turns.append(turn)
        return self

    def cumulative_cost(self) -> float:
        total = 0.0
        for turn in self.turns:
            total += turn.cost
        return total

    def ledger(self) -> CostLedger:
        ledger = CostLedger()
        for turn in self.turns:
            ledger.add(turn.t, turn.model_id, turn.tokens_in, turn.tokens_out, turn.cost)
        return ledger


def replay(trajectory: Trajectory, t: int) -> tuple[str, list[Turn]]:
    """Task text plus the turns strictly before ``t`` — exactly the router's view."""
    if not 0 <= t <= len(trajectory.turns):
        raise ValueError(f"replay index {t} out of range [0, {len(trajectory.turns)}]")
    return trajectory.task_text, list(trajectory.turns[:t])


def _turn_record(turn: Turn) -> dict:
    return {
        "t": turn.t,
        "model_id": turn.model_id,
        "raw_output": turn.raw_output,
        "action": turn.action,
        "observation": turn.observation,
        "tokens_in": turn.tokens_in,
        "tokens_out": turn.tokens_out,
        "cost": turn.cost,
        "errors": [
            {"rule": e.rule, "category": e.category, "severity": e.severity} for e in turn.errors
        ],
    }


def trajectory_record(trajectory: Trajectory) -> dict:
    return {
        "task_id": trajectory.task_id,
        "task_text": trajectory.task_text,
        "seed": trajectory.seed,
        "termination": trajectory.termination,
        "terminal_score": trajectory.terminal_score,
        "turns": [_turn_record(turn) for turn in trajectory.turns],
    }


def write_jsonl(trajectories: Iterable[Trajectory], path) -> int:
    """Write one trajectory per line; returns the number of records written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for trajectory in trajectories:
            fh.write(json.dumps(trajectory_record(trajectory)))
            fh.write("\n")
            count += 1
    return count


def _parse_turn(record: dict, line_no: int, index: int) -> Turn:
    try:
        return Turn(
            t=record["t"],
            model_id=record["model_id"],
            raw_output=record["raw_output"],
            action=record["action"],
            observation=record["observation"],
            tokens_in=record["tokens_in"],
            tokens_out=record["tokens_out"],
            cost=record["cost"],
            errors=tuple(
                ErrorEvent(e["rule"], e["category"], e["severity"]) for e in record["errors"]
            ),
        )
    except KeyError as exc:
        raise DataError(f"line {line_no}: turn {index} missing field {exc}") from exc


def parse_trajectory(record: dict, line_no: int = 0) -> Trajectory:
    try:
        trajectory = Trajectory(
            task_id=record["task_id"],
            task_text=record["task_text"],
            seed=record["seed"],
            termination=record["termination"],
            terminal_score=record["terminal_score"],
        )
        raw_turns = record["turns"]
    except KeyError as exc:
        raise DataError(f"line {line_no}: missing field {exc}") from exc
    if trajectory.termination not in TERMINATIONS:
        raise DataError(f"line {line_no}: unknown termination {trajectory.termination!r}")
    for index, raw in enumerate(raw_turns):
        turn = _parse_turn(raw, line_no, index)
        if turn.t != index:
            raise DataError(f"line {line_no}: turn index {turn.t} at position {index}")
        trajectory.turns.append(turn)
    return trajectory


def read_jsonl(path) -> Iterator[Trajectory]:
    """Stream trajectories from a JSONL log, one record at a time."""
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise TransportError(f"cannot open log {path}: {exc}") from exc
    with handle as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            yield parse_trajectory(record, line_no)
