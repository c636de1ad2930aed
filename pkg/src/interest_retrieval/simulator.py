"""Synthetic multi-interest click streams with interest drift.

Topics own disjoint vocabularies: a Zipf-weighted set of core terms shared by
all documents of the topic, plus several facets (sub-themes) with their own
terms. Titles are token bags drawn from the topic's core terms, one facet and
an optional shared background vocabulary.

Every user holds a set of active topics and, for each of them, a preferred
facet. A click on a topic lands on the preferred facet with probability
``facet_focus`` and on a uniformly drawn facet of that topic otherwise. At
the start of every period after the first, each preferred facet moves to a
different facet with probability ``facet_shift``; on top of that, at each
drift boundary a user swaps one active topic for a fresh one with the
configured probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Click, write_clicks, write_corpus, write_jsonl
from .keyterm import StopwordExtractor
from .units import Document

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    num_users: int = 500
    num_topics: int = 8
    core_terms_per_topic: int = 6
    facets_per_topic: int = 8
    terms_per_facet: int = 4
    docs_per_topic: int = 400
    title_length: tuple[int, int] = (6, 10)
    # share of title tokens drawn from the document's facet rather than the topic core
    facet_token_rate: float = 0.65
    core_zipf: float = 1.0
    facet_zipf: float = 1.5
    background_terms: int = 30
    background_rate: float = 0.05
    interests_per_user: tuple[int, int] = (3, 3)
    topic_skew: float = 0.0
    facet_focus: float = 0.8
    facet_shift: float = 0.25
    periods: tuple[str, ...] = ("A", "B", "C")
    clicks_per_period: tuple[int, ...] = (20, 20, 10)
    # (period label, probability that a user swaps one active topic at its start)
    drift: tuple[tuple[str, float], ...] = (("B", 0.5),)
    period_length_ms: int = 7 * 24 * 3600 * 1000
    start_time_ms: int = 1_700_000_000_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_topics < 1 or self.num_users < 0:
            raise SimConfigError("need at least one topic and a non-negative user count")
        if len(self.clicks_per_period) != len(self.periods):
            raise SimConfigError("clicks_per_period must have one entry per period")
        if self.docs_per_topic < 1 and any(self.clicks_per_period) and self.num_users:
            raise SimConfigError("docs_per_topic must be positive when clicks are requested")
        lo, hi = self.interests_per_user
        if not 1 <= lo <= hi <= self.num_topics:
            raise SimConfigError("interests_per_user must satisfy 1 <= min <= max <= num_topics")
        if self.title_length[0] < 1 or self.title_length[0] > self.title_length[1]:
            raise SimConfigError("title_length must be a non-empty positive range")
        if self.core_terms_per_topic < 1 or self.facets_per_topic < 1 or self.terms_per_facet < 0:
            raise SimConfigError("topic vocabulary sizes must be positive")
        for name in ("facet_token_rate", "background_rate", "facet_focus", "facet_shift"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SimConfigError(f"{name} must be in [0, 1]")
        for label, prob in self.drift:
            if label not in self.periods:
                raise SimConfigError(f"drift period {label!r} not among periods")
            if not 0.0 <= prob <= 1.0:
                raise SimConfigError("drift probability must be in [0, 1]")
            if hi == self.num_topics and prob > 0:
                raise SimConfigError("drift needs a topic outside every user's active set")

    def to_dict(self) -> dict:
        return {
            "num_users": self.num_users,
            "num_topics": self.num_topics,
            "core_terms_per_topic": self.core_terms_per_topic,
            "facets_per_topic": self.facets_per_topic,
            "terms_per_facet": self.terms_per_facet,
            "docs_per_topic": self.docs_per_topic,
            "title_length": list(self.title_length),
            "facet_token_rate": self.facet_token_rate,
            "core_zipf": self.core_zipf,
            "facet_zipf": self.facet_zipf,
            "background_terms": self.background_terms,
            "background_rate": self.background_rate,
            "interests_per_user": list(self.interests_per_user),
            "topic_skew": self.topic_skew,
            "facet_focus": self.facet_focus,
            "facet_shift": self.facet_shift,
            "periods": list(self.periods),
            "clicks_per_period": list(self.clicks_per_period),
            "drift": [[p, q] for p, q in self.drift],
            "period_length_ms": self.period_length_ms,
            "start_time_ms": self.start_time_ms,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> SimConfig:
        kw = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        for key in ("title_length", "interests_per_user", "periods", "clicks_per_period"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "drift" in kw:
            kw["drift"] = tuple((str(p), float(q)) for p, q in kw["drift"])
        return cls(**kw)


@dataclass
class Topic:
    core: list[str]
    facets: list[list[str]]

    @property
    def terms(self) -> list[str]:
        return self.core + [t for f in self.facets for t in f]


@dataclass
class SimOutput:
    config: SimConfig
    topics: list[Topic]
    background: list[str]
    corpus: list[Document]
    doc_topic: dict[str, int]
    doc_facet: dict[str, int]
    clicks: dict[str, list[Click]]  # period -> clicks in timestamp order
    truth: dict[str, dict[str, list[int]]]  # period -> user -> active topics
    drifted: dict[str, set[str]] = field(default_factory=dict)  # period -> users that swapped

    @property
    def vocabulary(self) -> list[str]:
        return [t for topic in self.topics for t in topic.terms] + list(self.background)

    @property
    def stopwords(self) -> frozenset[str]:
        return frozenset(self.background)

    def clicks_for(self, periods: Sequence[str]) -> list[Click]:
        out = [c for p in periods for c in self.clicks[p]]
        return sorted(out, key=lambda c: (c.timestamp, c.user_id, c.doc_id))

    def truth_records(self) -> list[dict]:
        return [
            {"period": p, "user_id": u, "topics": topics, "drifted": u in self.drifted.get(p, set())}
            for p in self.config.periods
            for u, topics in self.truth[p].items()
        ]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Write corpus, per-period click logs, ground truth and stopwords."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"corpus": out / "corpus.jsonl", "truth": out / "truth.jsonl", "stopwords": out / "stopwords.txt"}
        write_corpus(paths["corpus"], self.corpus)
        write_jsonl(paths["truth"], self.truth_records())
        for p in self.config.periods:
            paths[f"clicks_{p}"] = out / f"clicks_{p}.jsonl"
            write_clicks(paths[f"clicks_{p}"], self.clicks[p])
        paths["clicks"] = out / "clicks.jsonl"
        write_clicks(paths["clicks"], self.clicks_for(self.config.periods))
        paths["stopwords"].write_text("".join(f"{w}\n" for w in sorted(self.background)))
        paths["vocabulary"] = out / "vocabulary.json"
        paths["vocabulary"].write_text(json.dumps(self.vocabulary))
        return paths


def _make_words(count: int, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        syllables = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syllables))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def generate(config: SimConfig) -> SimOutput:
    """Generate a corpus and per-period click logs from ``config`` (fully seeded)."""
    rng = np.random.default_rng(config.seed)
    per_topic = config.core_terms_per_topic + config.facets_per_topic * config.terms_per_facet
    words = _make_words(config.num_topics * per_topic + config.background_terms, rng)
    topics = []
    for t in range(config.num_topics):
        chunk = words[t * per_topic : (t + 1) * per_topic]
        core = chunk[: config.core_terms_per_topic]
        rest = chunk[config.core_terms_per_topic :]
        facets = [rest[i * config.terms_per_facet : (i + 1) * config.terms_per_facet] for i in range(config.facets_per_topic)]
        topics.append(Topic(core, facets))
    background = words[config.num_topics * per_topic :]

    core_w = _zipf_weights(config.core_terms_per_topic, config.core_zipf)
    facet_w = _zipf_weights(config.terms_per_facet, config.facet_zipf) if config.terms_per_facet else None
    extractor = StopwordExtractor(frozenset(background))
    n_docs = config.num_topics * config.docs_per_topic
    # doc ids are shuffled so id order carries no topic information
    id_perm = rng.permutation(n_docs)
    horizon = config.period_length_ms * len(config.periods)
    corpus: list[Document] = []
    doc_topic: dict[str, int] = {}
    doc_facet: dict[str, int] = {}
    by_topic_facet: dict[tuple[int, int], list[Document]] = {}
    for t, topic in enumerate(topics):
        for j in range(config.docs_per_topic):
            facet = int(rng.integers(config.facets_per_topic))
            length = int(rng.integers(config.title_length[0], config.title_length[1] + 1))
            tokens = []
            for _ in range(length):
                r = rng.random()
                if background and r < config.background_rate:
                    tokens.append(background[rng.integers(len(background))])
                elif topic.facets[facet] and r < config.background_rate + config.facet_token_rate:
                    tokens.append(topic.facets[facet][rng.choice(config.terms_per_facet, p=facet_w)])
                else:
                    tokens.append(topic.core[rng.choice(len(topic.core), p=core_w)])
            doc_id = f"doc{id_perm[t * config.docs_per_topic + j]:06d}"
            created = config.start_time_ms - config.period_length_ms + int(rng.integers(horizon))
            doc = Document.create(doc_id, " ".join(tokens), created, extractor)
            corpus.append(doc)
            doc_topic[doc_id] = t
            doc_facet[doc_id] = facet
            by_topic_facet.setdefault((t, facet), []).append(doc)
    corpus.sort(key=lambda d: d.doc_id)

    topic_p = _zipf_weights(config.num_topics, config.topic_skew)
    drift = dict(config.drift)
    clicks: dict[str, list[Click]] = {p: [] for p in config.periods}
    truth: dict[str, dict[str, list[int]]] = {p: {} for p in config.periods}
    drifted: dict[str, set[str]] = {p: set() for p in config.periods}
    width = len(str(max(config.num_users - 1, 0)))
    for u in range(config.num_users):
        user_id = f"user{u:0{width}d}"
        k = int(rng.integers(config.interests_per_user[0], config.interests_per_user[1] + 1))
        active = sorted(int(x) for x in rng.choice(config.num_topics, size=k, replace=False, p=topic_p))
        facet_of = {t: int(rng.integers(config.facets_per_topic)) for t in range(config.num_topics)}
        for pi, period in enumerate(config.periods):
            prob = drift.get(period, 0.0)
            if prob > 0 and rng.random() < prob:
                out_topic = active[int(rng.integers(len(active)))]
                pool = [t for t in range(config.num_topics) if t not in active]
                weights = topic_p[pool] / topic_p[pool].sum()
                new_topic = int(rng.choice(pool, p=weights))
                active = sorted([t for t in active if t != out_topic] + [new_topic])
                drifted[period].add(user_id)
            if pi > 0 and config.facet_shift > 0:
                for t in range(config.num_topics):
                    if config.facets_per_topic > 1 and rng.random() < config.facet_shift:
                        others = [f for f in range(config.facets_per_topic) if f != facet_of[t]]
                        facet_of[t] = others[int(rng.integers(len(others)))]
            truth[period][user_id] = list(active)
            n_clicks = config.clicks_per_period[pi]
            if n_clicks == 0:
                continue
            start = config.start_time_ms + pi * config.period_length_ms
            offsets = np.sort(rng.choice(config.period_length_ms, size=n_clicks, replace=False))
            for off in offsets:
                t = active[int(rng.integers(len(active)))]
                facet = facet_of[t]
                if rng.random() >= config.facet_focus:
                    facet = int(rng.integers(config.facets_per_topic))
                pool_docs = by_topic_facet.get((t, facet)) or [d for d in corpus if doc_topic[d.doc_id] == t]
                doc = pool_docs[int(rng.integers(len(pool_docs)))]
                clicks[period].append(Click(user_id, doc.doc_id, doc.title, start + int(off)))
    for p in config.periods:
        clicks[p].sort(key=lambda c: (c.timestamp, c.user_id, c.doc_id))
    return SimOutput(config, topics, background, corpus, doc_topic, doc_facet, clicks, truth, drifted)
