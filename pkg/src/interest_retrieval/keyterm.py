"""Key-term extraction and term-count aggregation for interest units."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from .embedding import tokenize

# term -> occurrence count (all counts >= 1)
TermCounts = dict[str, int]


class KeyTermExtractor(Protocol):
    def __call__(self, title: str) -> TermCounts: ...


@dataclass(frozen=True)
class StopwordExtractor:
    """Default extractor: tokenize, drop stopwords, count what remains.

    Stands in for a named-entity recognizer; any callable with the same
    signature can replace it.
    """

    stopwords: frozenset[str] = field(default_factory=frozenset)

    def __call__(self, title: str) -> TermCounts:
        return dict(Counter(t for t in tokenize(title) if t not in self.stopwords))


def load_stopwords(path: str | Path) -> frozenset[str]:
    """Read a stopword file: one lowercase term per line, blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def extract_key_terms(title: str, stopwords: Iterable[str] = ()) -> TermCounts:
    return StopwordExtractor(frozenset(stopwords))(title)


def merge_term_counts(a: Mapping[str, int], b: Mapping[str, int]) -> TermCounts:
    merged = dict(a)
    for term, count in b.items():
        merged[term] = merged.get(term, 0) + count
    return merged


def top_terms(counts: Mapping[str, int], k: int) -> list[str]:
    """The ``k`` most frequent terms; ties go to the lexicographically smaller term."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [term for term, _ in ranked[:k]]
