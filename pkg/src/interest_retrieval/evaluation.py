"""Offline evaluation with sampled candidates, HR@N and NDCG@N.

Protocol: the last ``test_tail`` clicks of every eligible user are held out.
Each held-out item is ranked by the system together with
``candidates_per_eval`` randomly drawn corpus items whose title cosine to it
is below ``distinct_sim_threshold``. A user's score is the mean over their
held-out items; reported metrics are unweighted means over users.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .data import Click
from .embedding import Embedder
from .index import DocumentIndex, build_index, rank_order
from .keyterm import KeyTermExtractor
from .units import Document, UnitConfig, UserProfile, build_profile

log = logging.getLogger(__name__)

SKIP_FLAG_FRACTION = 0.01


@dataclass(frozen=True)
class EvalConfig:
    min_clicks: int = 15
    max_clicks: int = 200
    test_tail: int = 5
    candidates_per_eval: int = 495
    distinct_sim_threshold: float = 0.4
    metric_cutoffs: tuple[int, ...] = (5, 20, 50)
    rng_seed: int = 0
    # Also drop documents the user clicked (train or test) from the negatives.
    exclude_interacted: bool = True

    def __post_init__(self) -> None:
        if self.test_tail < 1:
            raise ValueError("test_tail must be >= 1")
        if not self.metric_cutoffs or min(self.metric_cutoffs) < 1:
            raise ValueError("metric_cutoffs must be positive")
        if self.candidates_per_eval < max(self.metric_cutoffs):
            raise ValueError("candidates_per_eval must be >= the largest metric cutoff")

    def to_dict(self) -> dict:
        return {
            "min_clicks": self.min_clicks,
            "max_clicks": self.max_clicks,
            "test_tail": self.test_tail,
            "candidates_per_eval": self.candidates_per_eval,
            "distinct_sim_threshold": self.distinct_sim_threshold,
            "metric_cutoffs": list(self.metric_cutoffs),
            "rng_seed": self.rng_seed,
            "exclude_interacted": self.exclude_interacted,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> EvalConfig:
        kw = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "metric_cutoffs" in kw:
            kw["metric_cutoffs"] = tuple(int(c) for c in kw["metric_cutoffs"])
        return cls(**kw)


# -- metrics ----------------------------------------------------------------


def hit_ratio(rank: int | None, n: int) -> int:
    return int(rank is not None and rank <= n)


def ndcg(rank: int | None, n: int) -> float:
    """Single relevant item: the ideal DCG is 1, so NDCG is 1 / log2(rank + 1)."""
    if rank is None or rank > n:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def metric_names(cutoffs: Iterable[int]) -> list[str]:
    return [name for n in cutoffs for name in (f"H@{n}", f"N@{n}")]


# -- dataset preparation -----------------------------------------------------


@dataclass
class Split:
    train: dict[str, list[Click]]
    test: dict[str, list[Click]]
    excluded: dict[str, int] = field(default_factory=dict)


def split_dataset(clicks_by_user: Mapping[str, Sequence[Click]], config: EvalConfig = EvalConfig()) -> Split:
    """Hold out each eligible user's last ``test_tail`` clicks.

    Click lists must already be chronological.
    """
    train: dict[str, list[Click]] = {}
    test: dict[str, list[Click]] = {}
    excluded = Counter({"too_few_clicks": 0, "too_many_clicks": 0, "short_after_split": 0})
    for user in sorted(clicks_by_user):
        clicks = list(clicks_by_user[user])
        if len(clicks) < config.min_clicks:
            excluded["too_few_clicks"] += 1
        elif len(clicks) > config.max_clicks:
            excluded["too_many_clicks"] += 1
        elif len(clicks) < config.test_tail + 1:
            excluded["short_after_split"] += 1
        else:
            train[user] = clicks[: -config.test_tail]
            test[user] = clicks[-config.test_tail :]
    return Split(train, test, dict(excluded))


def sample_candidates(
    test_item: Document,
    corpus: DocumentIndex,
    config: EvalConfig,
    rng: np.random.Generator,
    embedder: Embedder | None = None,
    exclude: Iterable[str] = (),
) -> tuple[list[str], bool]:
    """Draw negatives for one held-out item; returns (doc_ids, shortfall)."""
    if test_item.doc_id in corpus:
        vec = corpus.vector(test_item.doc_id)
    elif embedder is not None:
        vec = embedder.embed(test_item.title)
    else:
        raise KeyError(f"{test_item.doc_id!r} not in corpus and no embedder given")
    eligible = (corpus.vectors @ vec) < config.distinct_sim_threshold
    for doc_id in (test_item.doc_id, *exclude):
        if doc_id in corpus:
            eligible[corpus.row(doc_id)] = False
    pool = np.flatnonzero(eligible)
    want = config.candidates_per_eval
    if len(pool) <= want:
        return [corpus.doc_ids[r] for r in pool], len(pool) < want
    picked = rng.choice(pool, size=want, replace=False)
    return [corpus.doc_ids[r] for r in picked], False


def map_cold_item(doc: Document, train_index: DocumentIndex, embedder: Embedder | None = None) -> str:
    """Most similar training document (ties: smallest doc_id)."""
    if len(train_index) == 0:
        raise ValueError("cannot map a cold item onto an empty training index")
    if doc.doc_id in train_index:
        return doc.doc_id
    vec = embedder.embed(doc.title) if embedder is not None else None
    if vec is None:
        raise ValueError("an embedder is needed to map a document outside the index")
    return train_index.doc_ids[rank_order(train_index.vectors @ vec)[0]]


def item_pop_rank(train: Iterable[Click], items: Iterable[str] = ()) -> list[str]:
    """Doc ids by training click count (desc, ties by id); unseen ``items`` last by id."""
    counts = Counter(c.doc_id for c in train)
    seen = sorted(counts, key=lambda d: (-counts[d], d))
    rest = sorted(set(items) - set(counts))
    return seen + rest


# -- systems -----------------------------------------------------------------


class RankableSystem(Protocol):
    name: str

    def rank(self, user_id: str, doc_ids: Sequence[str]) -> list[str]: ...


@dataclass
class InterestSystem:
    """Ranks candidates by the summed cosine to every unit of the user's profile."""

    profiles: Mapping[str, UserProfile]
    corpus: DocumentIndex
    name: str = "ira"

    def rank(self, user_id: str, doc_ids: Sequence[str]) -> list[str]:
        rows = self.corpus.rows(doc_ids)
        profile = self.profiles.get(user_id)
        if profile is None or not profile.units:
            scores = np.zeros(len(rows))
        else:
            scores = (self.corpus.vectors[rows] @ profile.unit_matrix().T).sum(axis=1)
        ids = self.corpus.doc_ids
        return [ids[r] for r in rows[rank_order(scores, rows)].tolist()]


@dataclass
class ItemPopSystem:
    """Global popularity; cold items borrow the count of their nearest training item."""

    train: Sequence[Click]
    corpus: DocumentIndex
    map_cold: bool = True
    name: str = "itempop"

    def __post_init__(self) -> None:
        self.counts = Counter(c.doc_id for c in self.train)
        train_ids = sorted(d for d in self.counts if d in self.corpus)
        self._train_rows = self.corpus.rows(train_ids)
        self._mapped: dict[str, str] = {}

    def _count(self, doc_id: str) -> int:
        if doc_id in self.counts or not self.map_cold or len(self._train_rows) == 0:
            return self.counts.get(doc_id, 0)
        target = self._mapped.get(doc_id)
        if target is None:
            sims = self.corpus.vectors[self._train_rows] @ self.corpus.vector(doc_id)
            best = rank_order(sims, self._train_rows)[0]
            target = self._mapped[doc_id] = self.corpus.doc_ids[self._train_rows[best]]
        return self.counts[target]

    def rank(self, user_id: str, doc_ids: Sequence[str]) -> list[str]:
        return sorted(doc_ids, key=lambda d: (-self._count(d), d))


@dataclass
class RandomSystem:
    seed: int = 0
    name: str = "random"

    def rank(self, user_id: str, doc_ids: Sequence[str]) -> list[str]:
        key = zlib.crc32("\x1f".join([user_id, *doc_ids]).encode())
        rng = np.random.default_rng([self.seed, key])
        return [doc_ids[i] for i in rng.permutation(len(doc_ids))]


def build_profiles(
    train: Mapping[str, Sequence[Click]],
    embedder: Embedder,
    config: UnitConfig = UnitConfig(),
    extractor: KeyTermExtractor | None = None,
    profiles: Mapping[str, UserProfile] | None = None,
) -> dict[str, UserProfile]:
    """Replay each user's clicks (chronologically) into a profile.

    Existing ``profiles`` are copied and extended, never modified.
    """
    out: dict[str, UserProfile] = {}
    base = profiles or {}
    for user in sorted(set(train) | set(base)):
        start = base[user].copy() if user in base else UserProfile(user)
        docs = (c.to_document(extractor) for c in sorted(train.get(user, ()), key=lambda c: (c.timestamp, c.doc_id)))
        out[user] = build_profile(user, docs, embedder, config, start)
    return out


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalDataset:
    corpus: DocumentIndex
    train: dict[str, list[Click]]
    test: dict[str, list[Click]]
    excluded: dict[str, int] = field(default_factory=dict)
    _samples: dict = field(default_factory=dict, init=False, repr=False)

    def candidates(self, user: str, i: int, config: EvalConfig) -> tuple[list[str], bool]:
        """Negatives for the user's i-th held-out click; memoized per config."""
        key = (user, i, config)
        hit = self._samples.get(key)
        if hit is None:
            tests = self.test[user]
            exclude: set[str] = set()
            if config.exclude_interacted:
                exclude = {c.doc_id for c in self.train.get(user, ())} | {c.doc_id for c in tests}
            rng = np.random.default_rng([config.rng_seed, _user_seed(user), i])
            hit = sample_candidates(self.corpus.document(tests[i].doc_id), self.corpus, config, rng, exclude=exclude)
            self._samples[key] = hit
        return hit

    @classmethod
    def from_split(cls, split: Split, docs: Sequence[Document], embedder: Embedder) -> EvalDataset:
        return cls(build_index(docs, embedder), split.train, split.test, split.excluded)

    def counts(self) -> dict[str, int]:
        train_items = {c.doc_id for cs in self.train.values() for c in cs}
        test_items = {c.doc_id for cs in self.test.values() for c in cs}
        return {
            "users": len(self.test),
            "train_items": len(train_items),
            "test_items": len(test_items),
            "train_interactions": sum(len(cs) for cs in self.train.values()),
            "test_interactions": sum(len(cs) for cs in self.test.values()),
            "cold_items": len(test_items - train_items),
        }


@dataclass
class EvalReport:
    system: str
    metrics: dict[str, float]
    per_user: list[dict]
    config: dict
    counts: dict[str, int]
    evaluations: int = 0
    skipped_users: int = 0
    shortfall_evaluations: int = 0
    candidate_sampling: str = "per-test-item"

    @property
    def skipped_flag(self) -> bool:
        total = len(self.per_user) + self.skipped_users
        return total > 0 and self.skipped_users / total > SKIP_FLAG_FRACTION

    def to_dict(self, include_users: bool = True) -> dict:
        out = {
            "system": self.system,
            "metrics": self.metrics,
            "counts": self.counts,
            "evaluations": self.evaluations,
            "skipped_users": self.skipped_users,
            "skipped_flag": self.skipped_flag,
            "shortfall_evaluations": self.shortfall_evaluations,
            "candidate_sampling": self.candidate_sampling,
            "config": self.config,
        }
        if include_users:
            out["per_user"] = self.per_user
        return out

    def to_json(self, include_users: bool = True) -> str:
        return json.dumps(self.to_dict(include_users), indent=2, sort_keys=True)


def _user_seed(user_id: str) -> int:
    return zlib.crc32(user_id.encode("utf-8"))


def evaluate(
    system: RankableSystem,
    dataset: EvalDataset,
    config: EvalConfig = EvalConfig(),
    config_echo: Mapping | None = None,
) -> EvalReport:
    cutoffs = list(config.metric_cutoffs)
    names = metric_names(cutoffs)
    per_user: list[dict] = []
    skipped = shortfalls = evaluations = 0
    for user in sorted(dataset.test):
        tests = dataset.test[user]
        sums = dict.fromkeys(names, 0.0)
        try:
            for i, click in enumerate(tests):
                cands, short = dataset.candidates(user, i, config)
                shortfalls += short
                ranking = system.rank(user, [click.doc_id, *cands])
                rank = ranking.index(click.doc_id) + 1
                for n in cutoffs:
                    sums[f"H@{n}"] += hit_ratio(rank, n)
                    sums[f"N@{n}"] += ndcg(rank, n)
        except Exception:  # a failing user is skipped, not fatal
            log.exception("system %s failed for user %s", system.name, user)
            skipped += 1
            continue
        evaluations += len(tests)
        per_user.append({"user_id": user, **{k: v / len(tests) for k, v in sums.items()}})
    metrics = {k: (float(np.mean([u[k] for u in per_user])) if per_user else 0.0) for k in names}
    return EvalReport(
        system=system.name,
        metrics=metrics,
        per_user=per_user,
        config=dict(config_echo) if config_echo is not None else {"eval": config.to_dict()},
        counts=dataset.counts(),
        evaluations=evaluations,
        skipped_users=skipped,
        shortfall_evaluations=shortfalls,
    )


def format_table(rows: Sequence[tuple[str, Mapping[str, float]]], cutoffs: Sequence[int] = (5, 20, 50)) -> str:
    """Plain-text table with one column per metric (H@5, N@5, H@20, ...)."""
    names = metric_names(cutoffs)
    width = max([len(r[0]) for r in rows] + [6])
    lines = [f"{'':<{width}} | " + " | ".join(f"{n:>6}" for n in names)]
    lines.append("-" * len(lines[0]))
    for label, metrics in rows:
        lines.append(f"{label:<{width}} | " + " | ".join(f"{metrics.get(n, float('nan')):.4f}" for n in names))
    return "\n".join(lines)
