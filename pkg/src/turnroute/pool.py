"""Candidate model pool: descriptors, pricing, attribute features, cost accounting.

Prices are stored in USD per one million tokens, exactly as published.
Costs accumulate in double precision with no rounding; display code rounds
to 6 decimals.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

TOKENS_PER_PRICE_UNIT = 1_000_000
ATTR_DIM = 8
DEFAULT_CUTOFF = (2024, 1)


@dataclass(frozen=True)
class ModelDescriptor:
    """Metadata and pricing for one candidate model."""

    id: str
    context_limit: int
    cutoff_year: int
    cutoff_month: int
    price_in: float
    price_out: float
    open_weights: bool = False

    def __post_init__(self):
        if not self.id:
            raise DataError("model id must be non-empty")
        if self.context_limit <= 0:
            raise DataError(f"model {self.id!r}: context_limit must be positive")
        if self.price_in <= 0 or self.price_out <= 0:
            raise DataError(f"model {self.id!r}: prices must be positive")
        if not 1 <= self.cutoff_month <= 12:
            raise DataError(f"model {self.id!r}: cutoff month out of range")

    @property
    def blended_price(self) -> float:
        """Input plus output price, used for cheapest-first tie-breaking."""
        return self.price_in + self.price_out


def turn_cost(descriptor: ModelDescriptor, tokens_in: int, tokens_out: int) -> float:
    """USD cost of one model invocation at the descriptor's per-million pricing."""
    if tokens_in < 0 or tokens_out < 0:
        raise ValueError("token counts must be non-negative")
    return (
        tokens_in * descriptor.price_in / TOKENS_PER_PRICE_UNIT
        + tokens_out * descriptor.price_out / TOKENS_PER_PRICE_UNIT
    )


def attr_features(descriptor: ModelDescriptor) -> np.ndarray:
    """8-d metadata feature vector for a descriptor.

    Layout (all finite):
      0  log10(context_limit / 1000)
      1  (cutoff_year - 2020)/10 + cutoff_month/120
      2  log10(price_in)
      3  log10(price_out)
      4  log10(price_in + price_out)
      5  price_out / (price_in + price_out)
      6  open_weights as 0/1
      7  reserved, always 0.0
    """
    d = descriptor
    return np.array(
        [
            math.log10(d.context_limit / 1000.0),
            (d.cutoff_year - 2020) / 10.0 + d.cutoff_month / 120.0,
            math.log10(d.price_in),
            math.log10(d.price_out),
            math.log10(d.price_in + d.price_out),
            d.price_out / (d.price_in + d.price_out),
            1.0 if d.open_weights else 0.0,
            0.0,
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class LedgerEntry:
    t: int
    model_id: str
    tokens_in: int
    tokens_out: int
    cost: float


@dataclass
class CostLedger:
    """Ordered per-turn cost entries for one episode.

    ``total`` is the running left-to-right sum of entry costs, so recomputing
    it in entry order reproduces it bit-exactly in double precision.
    """

    entries: list[LedgerEntry] = field(default_factory=list)
    total: float = 0.0

    def add(self, t: int, model_id: str, tokens_in: int, tokens_out: int, cost: float) -> None:
        if self.entries and t <= self.entries[-1].t:
            raise DataError(
                f"ledger entries must have strictly increasing turn indices "
                f"(got t={t} after t={self.entries[-1].t})"
            )
        self.entries.append(LedgerEntry(t, model_id, tokens_in, tokens_out, cost))
        self.total += cost

    def recompute_total(self) -> float:
        total = 0.0
        for entry in self.entries:
            total += entry.cost
        return total


def _parse_cutoff(raw, model_id: str) -> tuple[int, int]:
    if raw is None:
        logger.warning("model %r: missing cutoff, defaulting to %04d-%02d", model_id, *DEFAULT_CUTOFF)
        return DEFAULT_CUTOFF
    text = str(raw)
    parts = text.split("-")
    if len(parts) != 2:
        raise ConfigError(f"model {model_id!r}: cutoff must be 'YYYY-MM', got {text!r}")
    try:
        year, month = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"model {model_id!r}: cutoff must be 'YYYY-MM', got {text!r}") from exc
    return year, month


def load_pool(manifest_path) -> list[ModelDescriptor]:
    """Load a pool manifest (TOML, one ``[[model]]`` table per model).

    Returns descriptors in manifest order. Duplicate ids and empty pools are
    rejected. Parse failures surface the parser's line context.
    """
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib

    try:
        with open(manifest_path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"pool manifest not found: {manifest_path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"pool manifest {manifest_path}: {exc}") from exc

    tables = doc.get("model")
    if not tables:
        raise DataError(f"pool manifest {manifest_path}: pool must be non-empty")

    pool: list[ModelDescriptor] = []
    seen: set[str] = set()
    for table in tables:
        try:
            model_id = table["id"]
            year, month = _parse_cutoff(table.get("cutoff"), model_id)
            descriptor = ModelDescriptor(
                id=model_id,
                context_limit=int(table["context_limit"]),
                cutoff_year=year,
                cutoff_month=month,
                price_in=float(table["price_in"]),
                price_out=float(table["price_out"]),
                open_weights=bool(table.get("open_weights", False)),
            )
        except KeyError as exc:
            raise ConfigError(f"pool manifest {manifest_path}: model table missing field {exc}") from exc
        if descriptor.id in seen:
            raise DataError(f"pool manifest {manifest_path}: duplicate model id {descriptor.id!r}")
        seen.add(descriptor.id)
        pool.append(descriptor)
    return pool


def pool_by_id(pool: list[ModelDescriptor]) -> dict[str, ModelDescriptor]:
    return {d.id: d for d in pool}


def pool_digest(pool: list[ModelDescriptor]) -> str:
    """Stable content digest of a pool, recorded in run metadata."""
    payload = json.dumps(
        [
            [d.id, d.context_limit, d.cutoff_year, d.cutoff_month, d.price_in, d.price_out, d.open_weights]
            for d in pool
        ],
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
