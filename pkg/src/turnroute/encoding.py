"""History serialization, embedding providers, and model/joint encodings.

The serialized history uses a fixed template: a ``TASK:`` block that is never
truncated, followed by one ``TURN i:`` block per retained turn. Truncation
drops whole oldest action/observation pairs until the text fits the token
budget as measured by the active provider's counter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import DataError, HistoryOverBudgetError, TransportError
from .pool import ATTR_DIM, ModelDescriptor, attr_features
from .trajectory import Turn

DEFAULT_HISTORY_TOKEN_BUDGET = 8192
DEFAULT_EMBED_DIM = 1024

ATTR_HIDDEN_DIM = 32
RESIDUAL_DIM = 16
MODEL_EMBED_DIM = 64


@dataclass(frozen=True)
class HistoryText:
    """Serialized routing history and its token count under the active counter."""

    text: str
    token_count: int


def task_block(task_text: str) -> str:
    return f"TASK:\n{task_text}\n"


def turn_block(turn: Turn) -> str:
    return f"TURN {turn.t}:\nACTION: {turn.action}\nOBS: {turn.observation}\n"


def serialize_history(
    task_text: str,
    turns: Sequence[Turn],
    token_budget: int = DEFAULT_HISTORY_TOKEN_BUDGET,
    counter: Callable[[list[str]], list[int]] | None = None,
) -> HistoryText:
    """Serialize the task block plus the most recent turns that fit the budget.

    Whole oldest pairs are dropped first; the task block is never truncated.
    If the task block alone exceeds the budget the caller must raise it.
    """
    if counter is None:
        counter = count_whitespace_tokens
    blocks = [task_block(task_text)] + [turn_block(turn) for turn in turns]
    counts = counter(blocks)
    if counts[0] > token_budget:
        raise HistoryOverBudgetError(
            f"task block alone is {counts[0]} tokens, over the budget of {token_budget}"
        )

    # Greedy newest-first selection on per-block counts, then verify the
    # assembled text against the counter (subword counters need not be
    # additive across block boundaries).
    retained = len(turns)
    running = counts[0]
    for offset, block_count in enumerate(reversed(counts[1:])):
        if running + block_count > token_budget:
            retained = offset
            break
        running += block_count

    while True:
        text = "".join([blocks[0]] + blocks[len(blocks) - retained:])
        total = counter([text])[0]
        if total <= token_budget or retained == 0:
            return HistoryText(text=text, token_count=total)
        retained -= 1


def count_whitespace_tokens(texts: list[str]) -> list[int]:
    return [len(text.split()) for text in texts]


# ---------------------------------------------------------------------------
# Hashing embedder: the built-in deterministic provider
# ---------------------------------------------------------------------------

# splitmix64 finalizer constants (Steele et al.), used to mix each character
# trigram into a 64-bit code. All arithmetic wraps modulo 2**64.
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_GRAM_A = np.uint64(0x100000001B3)
_GRAM_B = np.uint64(0xC6A4A7935BD1E995)
_PAD_LEFT = "<"
_PAD_RIGHT = ">"


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def hash_embed(text: str, dim: int = DEFAULT_EMBED_DIM) -> np.ndarray:
    """Character 3-gram feature hashing with a signed 64-bit hash, L2-normalized.

    The text is padded as ``"<" + text + ">"``; each trigram of Unicode code
    points (c0, c1, c2) hashes to ``splitmix64(c0 + c1*0x100000001B3 +
    c2*0xC6A4A7935BD1E995 mod 2**64)``. The low bits select one of ``dim``
    buckets, the top bit selects the sign. Empty text maps to the zero vector;
    everything else has unit L2 norm. Platform-independent by construction.
    """
    vec = np.zeros(dim, dtype=np.float64)
    padded = _PAD_LEFT + text + _PAD_RIGHT
    if len(padded) < 3:
        return vec
    codes = np.frombuffer(padded.encode("utf-32-le"), dtype="<u4").astype(np.uint64)
    with np.errstate(over="ignore"):
        pre = codes[:-2] + codes[1:-1] * _GRAM_A + codes[2:] * _GRAM_B
        hashes = _splitmix64(pre)
    buckets = (hashes % np.uint64(dim)).astype(np.int64)
    signs = np.where((hashes >> np.uint64(63)).astype(bool), -1.0, 1.0)
    np.add.at(vec, buckets, signs)
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


class HashingProvider:
    """Zero-dependency embedding provider: 3-gram hashing plus whitespace counts."""

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        self.dim = dim

    def embed(self, texts: list[str]) -> np.ndarray:
        return np.stack([hash_embed(text, self.dim) for text in texts])

    def count(self, texts: list[str]) -> list[int]:
        return count_whitespace_tokens(texts)


class SidecarProvider:
    """HTTP client for the embedding-provider wire contract.

    Endpoints: ``POST /embed`` {texts} -> {dim, embeddings}, ``POST /count``
    {texts} -> {counts}, ``GET /health`` -> {status, dim}. Failed requests are
    retried with backoff before raising a transport error.
    """

    def __init__(self, base_url: str, retries: int = 3, timeout: float = 60.0):
        import requests

        self._requests = requests
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.timeout = timeout
        health = self._request("GET", "/health")
        if health.get("status") != "ok":
            raise TransportError(f"sidecar at {base_url} reported status {health.get('status')!r}")
        self.dim = int(health["dim"])

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = self.base_url + path
        last_error = None
        for attempt in range(self.retries):
            try:
                if method == "GET":
                    response = self._requests.get(url, timeout=self.timeout)
                else:
                    response = self._requests.post(url, json=payload, timeout=self.timeout)
                response.raise_for_status()
                return response.json()
            except Exception as exc:  # noqa: BLE001 - uniform retry over transport failures
                last_error = exc
                time.sleep(0.2 * (attempt + 1))
        raise TransportError(
            f"sidecar request {method} {url} failed after {self.retries} attempts: {last_error}"
        )

    def embed(self, texts: list[str]) -> np.ndarray:
        body = self._request("POST", "/embed", {"texts": texts})
        matrix = np.asarray(body["embeddings"], dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape != (len(texts), self.dim):
            raise DataError(
                f"sidecar returned embeddings of shape {matrix.shape}, "
                f"expected ({len(texts)}, {self.dim})"
            )
        return matrix

    def count(self, texts: list[str]) -> list[int]:
        body = self._request("POST", "/count", {"texts": texts})
        counts = [int(c) for c in body["counts"]]
        if len(counts) != len(texts):
            raise DataError(f"sidecar returned {len(counts)} counts for {len(texts)} texts")
        return counts


def embed_history(provider, history: HistoryText) -> np.ndarray:
    """Embed one serialized history; identical text yields an identical vector."""
    vec = provider.embed([history.text])[0]
    if vec.shape != (provider.dim,):
        raise DataError(f"provider returned dimension {vec.shape}, declared {provider.dim}")
    if not np.all(np.isfinite(vec)):
        raise DataError("provider returned non-finite embedding values")
    return vec


# ---------------------------------------------------------------------------
# Model encoder
# ---------------------------------------------------------------------------


@dataclass
class ModelEncoderParams:
    """Attribute MLP, per-model residual table, and the linear projection."""

    w_attr: np.ndarray
    b_attr: np.ndarray
    residuals: dict[str, np.ndarray]
    w_proj: np.ndarray
    b_proj: np.ndarray


def init_model_encoder(
    model_ids: Sequence[str],
    rng: np.random.Generator,
    attr_dim: int = ATTR_DIM,
    hidden_dim: int = ATTR_HIDDEN_DIM,
    residual_dim: int = RESIDUAL_DIM,
    out_dim: int = MODEL_EMBED_DIM,
) -> ModelEncoderParams:
    """Scaled-uniform fan-in initialization, zero biases."""

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ModelEncoderParams(
        w_attr=uniform((hidden_dim, attr_dim), attr_dim),
        b_attr=np.zeros(hidden_dim),
        residuals={mid: uniform((residual_dim,), residual_dim) for mid in model_ids},
        w_proj=uniform((out_dim, hidden_dim + residual_dim), hidden_dim + residual_dim),
        b_proj=np.zeros(out_dim),
    )


def encode_model(params: ModelEncoderParams, descriptor: ModelDescriptor) -> np.ndarray:
    """Project [relu(attr MLP); residual] to the model embedding."""
    if descriptor.id not in params.residuals:
        raise KeyError(f"no residual embedding for model {descriptor.id!r}")
    attrs = attr_features(descriptor)
    if params.w_attr.shape[1] != attrs.shape[0]:
        raise ValueError(
            f"attribute MLP expects {params.w_attr.shape[1]} features, got {attrs.shape[0]}"
        )
    hidden = np.maximum(params.w_attr @ attrs + params.b_attr, 0.0)
    combined = np.concatenate([hidden, params.residuals[descriptor.id]])
    return params.w_proj @ combined + params.b_proj


def joint_features(z_x: np.ndarray, z_a: np.ndarray) -> np.ndarray:
    """Exact concatenation [history embedding; model embedding]."""
    if z_x.ndim != 1 or z_a.ndim != 1:
        raise ValueError("joint_features expects 1-d embeddings")
    return np.concatenate([z_x, z_a])
