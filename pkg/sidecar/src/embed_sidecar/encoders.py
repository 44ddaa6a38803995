"""Encoder backends: a frozen sentence encoder and an offline hashing fallback.

Every encoder exposes ``dim``, ``embed(texts) -> (n, dim) unit-norm rows``,
and ``count(texts) -> token counts`` using its own tokenizer, so history
truncation in clients stays consistent with the active encoder.
"""

from __future__ import annotations

import numpy as np

DEFAULT_ENCODER = "Qwen/Qwen3-Embedding-0.6B"
HASH_DIM = 1024

# splitmix64 finalizer constants; trigram mixing matches nothing external,
# it only has to be deterministic and platform-independent.
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_GRAM_A = np.uint64(0x100000001B3)
_GRAM_B = np.uint64(0xC6A4A7935BD1E995)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class HashEncoder:
    """Deterministic character-trigram hashing encoder; needs no downloads.

    Tokens are whitespace-separated words, so ``count`` is a plain split.
    """

    name = "hash"

    def __init__(self, dim: int = HASH_DIM):
        self.dim = dim

    def embed(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._one(text) for text in texts])

    def _one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        padded = "<" + text + ">"
        if len(padded) < 3:
            return vec
        codes = np.frombuffer(padded.encode("utf-32-le"), dtype="<u4").astype(np.uint64)
        with np.errstate(over="ignore"):
            pre = codes[:-2] + codes[1:-1] * _GRAM_A + codes[2:] * _GRAM_B
            hashes = _splitmix64(pre)
        buckets = (hashes % np.uint64(self.dim)).astype(np.int64)
        signs = np.where((hashes >> np.uint64(63)).astype(bool), -1.0, 1.0)
        np.add.at(vec, buckets, signs)
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec

    def count(self, texts: list[str]) -> list[int]:
        return [len(text.split()) for text in texts]


class SentenceEncoder:
    """Frozen sentence-transformers encoder with its own tokenizer for counts."""

    def __init__(self, model_name: str = DEFAULT_ENCODER, max_tokens: int = 8192):
        from sentence_transformers import SentenceTransformer

        self.name = model_name
        self._model = SentenceTransformer(model_name)
        self._model.max_seq_length = max_tokens
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def embed(self, texts: list[str]) -> np.ndarray:
        vectors = self._model.encode(
            texts, convert_to_numpy=True, normalize_embeddings=True, show_progress_bar=False
        )
        return np.asarray(vectors, dtype=np.float64)

    def count(self, texts: list[str]) -> list[int]:
        tokenizer = self._model.tokenizer
        return [len(tokenizer.encode(text, add_special_tokens=False)) for text in texts]


def make_encoder(spec: str, max_tokens: int = 8192):
    """``hash`` (or ``hash:<dim>``) for offline use, otherwise a model name."""
    if spec == "hash":
        return HashEncoder()
    if spec.startswith("hash:"):
        return HashEncoder(dim=int(spec.split(":", 1)[1]))
    return SentenceEncoder(spec, max_tokens=max_tokens)
