"""Text embedders and cosine similarity.

Two deterministic reference embedders are provided:

* ``vocab``  - one dimension per vocabulary term, unknown tokens dropped.
  Collision free, so cosines can be computed by hand.
* ``hashed`` - open vocabulary; each token is bucketed by a stable 64-bit
  hash masked to ``dimension`` (a power of two).

Both produce L2-normalized count vectors. Text without any token maps to the
all-zero sentinel, whose similarity to anything is 0.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

DEFAULT_DIMENSION = 64
MIN_TOKEN_LENGTH = 2

_TOKEN_RE = re.compile(r"[^\W_]+")


class DimensionMismatchError(ValueError):
    """Raised when vectors from incompatible embedder configs are compared."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters.

    Tokens shorter than two characters are dropped.
    """
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= MIN_TOKEN_LENGTH]


def zero_vector(dimension: int) -> np.ndarray:
    return np.zeros(dimension, dtype=np.float64)


def is_zero(vector: np.ndarray) -> bool:
    return not np.any(vector)


def _normalize(vector: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.dot(vector, vector))
    if norm == 0.0:
        return vector
    return vector / norm


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two embedding vectors (dot product of unit vectors)."""
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"cannot compare vectors of dimension {a.shape[-1]} and {b.shape[-1]}"
        )
    return float(np.dot(a, b))


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "hashed"
    dimension: int = DEFAULT_DIMENSION
    vocabulary: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("vocab", "hashed"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        if self.kind == "vocab":
            if len(self.vocabulary) != self.dimension:
                raise ValueError(
                    f"vocab embedder dimension {self.dimension} != "
                    f"vocabulary length {len(self.vocabulary)}"
                )
            if len(set(self.vocabulary)) != len(self.vocabulary):
                raise ValueError("vocabulary terms must be unique")
        elif self.dimension & (self.dimension - 1):
            raise ValueError(f"hashed dimension must be a power of two, got {self.dimension}")

    @classmethod
    def for_vocabulary(cls, terms: Iterable[str]) -> EmbedderConfig:
        vocab = tuple(terms)
        return cls(kind="vocab", dimension=len(vocab), vocabulary=vocab)

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "dimension": self.dimension}
        if self.kind == "vocab":
            out["vocabulary"] = list(self.vocabulary)
        else:
            out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> EmbedderConfig:
        kind = data.get("kind", "hashed")
        vocab = tuple(data.get("vocabulary") or ())
        dimension = data.get("dimension")
        if dimension is None:
            dimension = len(vocab) if kind == "vocab" else DEFAULT_DIMENSION
        return cls(kind=kind, dimension=int(dimension), vocabulary=vocab, seed=int(data.get("seed", 0)))

    @property
    def fingerprint(self) -> str:
        """Short identifier; equal fingerprints mean interchangeable vectors."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return f"{self.kind}-{self.dimension}-{hashlib.blake2b(payload, digest_size=6).hexdigest()}"


class Embedder(Protocol):
    """Anything that maps texts to unit vectors of a fixed dimension."""

    dimension: int
    fingerprint: str

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


@dataclass
class VocabEmbedder:
    config: EmbedderConfig
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.config.kind != "vocab":
            raise ValueError("VocabEmbedder needs a vocab config")
        self._index = {term: i for i, term in enumerate(self.config.vocabulary)}

    @property
    def dimension(self) -> int:
        return self.config.dimension

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint

    def embed(self, text: str) -> np.ndarray:
        vec = zero_vector(self.dimension)
        for token, count in Counter(tokenize(text)).items():
            idx = self._index.get(token)
            if idx is not None:
                vec[idx] += count
        return _normalize(vec)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        return _stack([self.embed(t) for t in texts], self.dimension)


@lru_cache(maxsize=1 << 16)
def _token_hash(token: str, seed: int) -> int:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, salt=seed.to_bytes(8, "little", signed=True)
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass
class HashedEmbedder:
    config: EmbedderConfig

    def __post_init__(self) -> None:
        if self.config.kind != "hashed":
            raise ValueError("HashedEmbedder needs a hashed config")
        self._mask = self.config.dimension - 1

    @property
    def dimension(self) -> int:
        return self.config.dimension

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint

    def bucket(self, token: str) -> int:
        return _token_hash(token, self.config.seed) & self._mask

    def embed(self, text: str) -> np.ndarray:
        vec = zero_vector(self.dimension)
        for token, count in Counter(tokenize(text)).items():
            vec[self.bucket(token)] += count
        return _normalize(vec)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        return _stack([self.embed(t) for t in texts], self.dimension)


def _stack(rows: list[np.ndarray], dimension: int) -> np.ndarray:
    if not rows:
        return np.zeros((0, dimension), dtype=np.float64)
    return np.vstack(rows)


def make_embedder(config: EmbedderConfig) -> VocabEmbedder | HashedEmbedder:
    if config.kind == "vocab":
        return VocabEmbedder(config)
    return HashedEmbedder(config)


def embed_text(text: str, config: EmbedderConfig) -> np.ndarray:
    """Embed ``text`` with a freshly constructed reference embedder."""
    return make_embedder(config).embed(text)


# Precomputed vectors: JSON lines of {"doc_id": str, "vector": [float, ...]}


def read_vectors_jsonl(path: str | Path, dimension: int | None = None) -> dict[str, np.ndarray]:
    """Load precomputed document vectors, normalizing each to unit length."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                doc_id = str(record["doc_id"])
                vec = np.asarray(record["vector"], dtype=np.float64)
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed vector record ({exc})") from exc
            if vec.ndim != 1 or not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}:{lineno}: vector must be a finite 1-d list")
            if dimension is not None and vec.shape[0] != dimension:
                raise DimensionMismatchError(
                    f"{path}:{lineno}: expected dimension {dimension}, got {vec.shape[0]}"
                )
            vectors[doc_id] = _normalize(vec)
    return vectors


def write_vectors_jsonl(path: str | Path, vectors: Mapping[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, vec in vectors.items():
            fh.write(json.dumps({"doc_id": doc_id, "vector": [float(x) for x in vec]}) + "\n")

