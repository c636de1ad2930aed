"""Personalized retrieval driven by a user's interest units.

Each unit pulls its ``per_unit_n`` nearest documents from the index; the
union is then scored by the sum of each candidate's cosine to *every* unit
(not just the ones that retrieved it) and sorted descending.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .embedding import DimensionMismatchError, similarity
from .index import SCORE_DECIMALS, DocumentIndex, rank_order
from .units import UserProfile


class EmbedderMismatchError(ValueError):
    """Profile and index were built with different embedders."""


@dataclass(frozen=True)
class RetrievalConfig:
    per_unit_n: int = 100
    max_results: int = 100
    exclude_clicked: bool = True

    def __post_init__(self) -> None:
        if self.per_unit_n < 1 or self.max_results < 1:
            raise ValueError("per_unit_n and max_results must be >= 1")

    def to_dict(self) -> dict:
        return {"per_unit_n": self.per_unit_n, "max_results": self.max_results, "exclude_clicked": self.exclude_clicked}

    @classmethod
    def from_dict(cls, data: Mapping) -> RetrievalConfig:
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class RankedResult:
    items: list[tuple[str, float]] = field(default_factory=list)

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i: int) -> tuple[str, float]:
        return self.items[i]

    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.items]

    def to_records(self) -> list[dict]:
        return [{"rank": i, "doc_id": d, "score": s} for i, (d, s) in enumerate(self.items, 1)]


def score_document(doc_embedding: np.ndarray, profile: UserProfile) -> float:
    """Sum of cosine similarities between a document and all of the profile's units."""
    return sum((similarity(doc_embedding, u.embedding) for u in profile.units), 0.0)


def _check_compatible(profile: UserProfile, index: DocumentIndex, units: np.ndarray) -> None:
    if profile.embedder_id and index.embedder_id and profile.embedder_id != index.embedder_id:
        raise EmbedderMismatchError(
            f"profile embedder {profile.embedder_id} differs from index embedder {index.embedder_id}"
        )
    if units.shape[1] != index.dimension:
        raise DimensionMismatchError(
            f"unit dimension {units.shape[1]} does not match index dimension {index.dimension}"
        )


def retrieve(
    profile: UserProfile,
    index: DocumentIndex,
    config: RetrievalConfig = RetrievalConfig(),
) -> RankedResult:
    if not profile.units or len(index) == 0:
        return RankedResult()
    units = profile.unit_matrix()
    _check_compatible(profile, index, units)

    hits = [rows for rows, _ in index.search_rows_many(units, config.per_unit_n)]
    rows = np.unique(np.concatenate(hits))
    if config.exclude_clicked:
        clicked = index.rows(d for d in profile.member_ids() if d in index)
        rows = rows[~np.isin(rows, clicked)]
    if len(rows) == 0:
        return RankedResult()

    scores = np.round((index.vectors[rows] @ units.T).sum(axis=1), SCORE_DECIMALS)
    order = rank_order(scores, rows)[: config.max_results]
    ids = index.doc_ids
    return RankedResult([(ids[r], s) for r, s in zip(rows[order].tolist(), scores[order].tolist())])
