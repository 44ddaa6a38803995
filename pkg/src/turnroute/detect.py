"""Rule-based error detection and annealed, progress-weighted outcome targets.

Rules match case-insensitively against environment observations. A pattern
entry is a literal substring unless it starts with ``re:``, in which case the
remainder is compiled as a regular expression. Validation (including regex
compilation) happens at ruleset load time, never inside ``detect``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .exceptions import ConfigError, DataError

if TYPE_CHECKING:
    from .trajectory import Trajectory

SEVERITIES = ("low", "medium", "high")
_SEVERITY_RANK = {name: rank for rank, name in enumerate(SEVERITIES)}

REGEX_PREFIX = "re:"


@dataclass(frozen=True)
class ErrorEvent:
    """One rule firing on one observation."""

    rule: str
    category: str
    severity: str


@dataclass(frozen=True)
class ErrorRule:
    name: str
    category: str
    severity: str
    patterns: tuple[str, ...]
    _matchers: tuple = field(repr=False, compare=False, default=())

    def matches(self, observation_lower: str) -> bool:
        return any(match(observation_lower) for match in self._matchers)

    def first_literal_pattern(self) -> str | None:
        for pattern in self.patterns:
            if not pattern.startswith(REGEX_PREFIX):
                return pattern
        return None


def _compile_matcher(pattern: str, rule_name: str):
    if pattern.startswith(REGEX_PREFIX):
        try:
            compiled = re.compile(pattern[len(REGEX_PREFIX):], re.IGNORECASE)
        except re.error as exc:
            raise ConfigError(f"rule {rule_name!r}: invalid regex {pattern!r}: {exc}") from exc
        return lambda text: compiled.search(text) is not None
    literal = pattern.lower()
    return lambda text: literal in text


def make_rule(name: str, category: str, severity: str, patterns: list[str]) -> ErrorRule:
    if not name:
        raise ConfigError("rule name must be non-empty")
    if severity not in SEVERITIES:
        raise ConfigError(f"rule {name!r}: severity must be one of {SEVERITIES}, got {severity!r}")
    if not patterns:
        raise ConfigError(f"rule {name!r}: patterns must be non-empty")
    matchers = tuple(_compile_matcher(p, name) for p in patterns)
    return ErrorRule(name, category, severity, tuple(patterns), matchers)


def load_ruleset(path) -> list[ErrorRule]:
    """Load and validate a ruleset file (JSON list of rule records)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            records = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"ruleset not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"ruleset {path}: {exc}") from exc

    rules = []
    seen = set()
    for record in records:
        rule = make_rule(record["name"], record["category"], record["severity"], record["patterns"])
        if rule.name in seen:
            raise ConfigError(f"ruleset {path}: duplicate rule name {rule.name!r}")
        seen.add(rule.name)
        rules.append(rule)
    return rules


def detect(observation: str, ruleset: list[ErrorRule]) -> list[ErrorEvent]:
    """Return an event for every rule with a matching pattern, in ruleset order."""
    lowered = observation.lower()
    return [
        ErrorEvent(rule.name, rule.category, rule.severity)
        for rule in ruleset
        if rule.matches(lowered)
    ]


DEFAULT_BETAS = {"high": 1.0, "medium": 0.8, "low": 0.2}


@dataclass(frozen=True)
class PenaltyConfig:
    """Severity coefficients and the piecewise-linear progress-weight warmup.

    ``base`` scales every turn penalty; the default ``1/t_max`` matches the
    per-turn share of an episode, and ``base=0`` disables penalties entirely.
    """

    t_max: int = 50
    betas: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_BETAS))
    p0: float = 0.3
    p1: float = 0.7
    w_min: float = 0.3
    w_max: float = 1.0
    base: float | None = None

    def __post_init__(self):
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if not (0.0 <= self.p0 < self.p1 <= 1.0):
            raise ConfigError(f"require 0 <= p0 < p1 <= 1, got p0={self.p0}, p1={self.p1}")
        if not (0.0 <= self.w_min <= self.w_max <= 1.0):
            raise ConfigError(f"require 0 <= w_min <= w_max <= 1, got {self.w_min}, {self.w_max}")
        for severity in SEVERITIES:
            if severity not in self.betas:
                raise ConfigError(f"betas missing severity {severity!r}")
        if self.base is None:
            object.__setattr__(self, "base", 1.0 / self.t_max)


def progress_weight(p: float, config: PenaltyConfig) -> float:
    """Warmup weight at episode progress ``p``: flat at w_min, linear, flat at w_max."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {p}")
    if p <= config.p0:
        return config.w_min
    if p >= config.p1:
        return config.w_max
    return config.w_min + (p - config.p0) / (config.p1 - config.p0) * (config.w_max - config.w_min)


def max_severity(events: list[ErrorEvent]) -> str:
    return max(events, key=lambda e: _SEVERITY_RANK[e.severity]).severity


def turn_penalty(events: list[ErrorEvent], i: int, config: PenaltyConfig) -> float:
    """Penalty for turn ``i``: zero without errors, else base * beta(max severity) * w((i+1)/t_max)."""
    if not events:
        return 0.0
    beta = config.betas[max_severity(events)]
    return config.base * beta * progress_weight((i + 1) / config.t_max, config)


def normalize_score(score: float, score_range: tuple[float, float]) -> float:
    lo, hi = score_range
    if not lo < hi:
        raise DataError(f"score range must satisfy lo < hi, got ({lo}, {hi})")
    if not lo <= score <= hi:
        raise DataError(f"terminal score {score} outside declared range [{lo}, {hi}]")
    return (score - lo) / (hi - lo)


def outcome_targets(
    trajectory: "Trajectory",
    config: PenaltyConfig,
    score_range: tuple[float, float],
) -> list[float]:
    """Per-turn regression targets: normalized terminal score minus the
    cumulative penalty of this turn and everything after it.

    Computed by the backward recurrence target[t] = target[t+1] - penalty[t],
    anchored at the normalized terminal score past the last turn.
    """
    s_norm = normalize_score(trajectory.terminal_score, score_range)
    targets = [0.0] * len(trajectory.turns)
    suffix = s_norm
    for t in range(len(trajectory.turns) - 1, -1, -1):
        suffix -= turn_penalty(list(trajectory.turns[t].errors), t, config)
        targets[t] = suffix
    return targets
