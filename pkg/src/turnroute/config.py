"""Run configuration: one declarative TOML file, flag overrides win.

Paths may be literal or ``builtin:<name>`` references to the shipped data
files (``builtin:table2`` pool, ``builtin:specialist-4`` world, and so on).
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field

from .assets import builtin_pool_path, builtin_ruleset_path, builtin_world_path
from .detect import PenaltyConfig, load_ruleset
from .encoding import HashingProvider, SidecarProvider
from .estimator import TrainConfig
from .exceptions import ConfigError
from .pool import load_pool, pool_by_id
from .routing import EpisodeConfig
from .simenv import WorldBundle, load_world


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    pool: str = "builtin:table2"
    world: str = "builtin:specialist-4"
    ruleset: str | None = None
    provider_kind: str = "hash"
    provider_url: str = ""
    provider_dim: int = 1024
    episode: dict = field(default_factory=dict)
    penalty: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_run_config(path) -> RunConfig:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc

    paths = doc.get("paths", {})
    provider = doc.get("provider", {})
    return RunConfig(
        seed=int(doc.get("seed", 0)),
        output_dir=str(doc.get("output_dir", "runs")),
        pool=str(paths.get("pool", "builtin:table2")),
        world=str(paths.get("world", "builtin:specialist-4")),
        ruleset=paths.get("ruleset"),
        provider_kind=str(provider.get("kind", "hash")),
        provider_url=str(provider.get("url", "")),
        provider_dim=int(provider.get("dim", 1024)),
        episode=dict(doc.get("episode", {})),
        penalty=dict(doc.get("penalty", {})),
        train=dict(doc.get("train", {})),
    )


def _resolve_path(spec: str, kind: str):
    if spec.startswith("builtin:"):
        name = spec[len("builtin:"):]
        if kind == "pool":
            if name != "table2":
                raise ConfigError(f"no built-in pool {name!r}")
            return builtin_pool_path()
        if kind == "world":
            return builtin_world_path(name)
        if kind == "ruleset":
            return builtin_ruleset_path(name)
        raise ConfigError(f"unknown builtin kind {kind!r}")
    return spec


@dataclass
class ResolvedRun:
    """Everything a subcommand needs, resolved and validated once."""

    config: RunConfig
    bundle: WorldBundle
    pool: list
    ruleset: list
    provider: object
    episode: EpisodeConfig
    penalty: PenaltyConfig
    train_config: TrainConfig


def resolve_run(
    config: RunConfig,
    seed: int | None = None,
    budget_scale: float = 1.0,
    history_budget: int | None = None,
    no_error_penalty: bool = False,
    train_overrides: dict | None = None,
) -> ResolvedRun:
    if seed is not None:
        config.seed = seed

    full_pool = load_pool(_resolve_path(config.pool, "pool"))
    bundle = load_world(_resolve_path(config.world, "world"))

    by_id = pool_by_id(full_pool)
    missing = [mid for mid in bundle.model_ids if mid not in by_id]
    if missing:
        raise ConfigError(f"world references models missing from the pool manifest: {missing}")
    pool = [by_id[mid] for mid in bundle.model_ids]

    ruleset_spec = config.ruleset or f"builtin:{bundle.ruleset_name}"
    ruleset = load_ruleset(_resolve_path(ruleset_spec, "ruleset"))

    if config.provider_kind == "hash":
        provider = HashingProvider(dim=config.provider_dim)
    elif config.provider_kind == "sidecar":
        if not config.provider_url:
            raise ConfigError("provider.kind = 'sidecar' requires provider.url")
        provider = SidecarProvider(config.provider_url)
    else:
        raise ConfigError(f"unknown provider kind {config.provider_kind!r}")

    episode_fields = {}
    if bundle.episode is not None:
        episode_fields.update(
            budget=bundle.episode.budget,
            t_max=bundle.episode.t_max,
            history_token_budget=bundle.episode.history_token_budget,
        )
    episode_fields.update(config.episode)
    episode = EpisodeConfig(**episode_fields)
    if budget_scale != 1.0:
        episode = EpisodeConfig(
            budget=episode.budget * budget_scale,
            t_max=episode.t_max,
            history_token_budget=episode.history_token_budget,
        )
    if history_budget is not None:
        episode = EpisodeConfig(
            budget=episode.budget,
            t_max=episode.t_max,
            history_token_budget=history_budget,
        )

    penalty_fields = dict(config.penalty)
    if "betas" in penalty_fields:
        penalty_fields["betas"] = dict(penalty_fields["betas"])
    if no_error_penalty:
        penalty_fields["base"] = 0.0
    penalty = PenaltyConfig(t_max=episode.t_max, **penalty_fields)

    train_fields = dict(config.train)
    if "hidden_sizes" in train_fields:
        train_fields["hidden_sizes"] = tuple(train_fields["hidden_sizes"])
    train_fields.setdefault("seed", config.seed)
    train_fields.update(train_overrides or {})
    train_config = TrainConfig(**train_fields)

    return ResolvedRun(
        config=config,
        bundle=bundle,
        pool=pool,
        ruleset=ruleset,
        provider=provider,
        episode=episode,
        penalty=penalty,
        train_config=train_config,
    )
