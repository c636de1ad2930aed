"""Per-user interest units: merge-or-create updates, pruning, persistence.

A unit summarizes one interest of a user as a contextual text built from the
title of its most recently clicked member ([T]) and the most frequent key
terms of all members ([K]), plus numeric features ([F]: size and last update
time). Each click is compared against every unit's contextual-text embedding;
all units at or above ``tau`` are merged together with the clicked document,
otherwise the document seeds a new unit. Pruning runs after every update.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .embedding import Embedder
from .keyterm import KeyTermExtractor, StopwordExtractor, TermCounts, merge_term_counts, top_terms

SNAPSHOT_VERSION = 1

PRUNE_STRATEGIES = ("grouped", "recency", "size", "none")
TEXT_MODES = ("title+terms", "title", "terms")


class DuplicateEventError(ValueError):
    """The click (same document, not newer than the recorded click) was already applied."""


class SnapshotError(ValueError):
    """A profile snapshot could not be decoded."""


class SnapshotVersionError(SnapshotError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    timestamp: int = 0
    key_terms: TermCounts = field(default_factory=dict, compare=False)

    @classmethod
    def create(
        cls,
        doc_id: str,
        title: str,
        timestamp: int = 0,
        extractor: KeyTermExtractor | None = None,
    ) -> Document:
        """Build a document, deriving key terms from the title."""
        if not doc_id:
            raise ValueError("doc_id must be non-empty")
        extractor = extractor or StopwordExtractor()
        return cls(str(doc_id), title, int(timestamp), extractor(title))


@dataclass(frozen=True)
class UnitConfig:
    tau: float = 0.65
    big_threshold: int = 5
    keep_per_group: int = 10
    top_k_terms: int = 10
    # Pruning variants used by the ablation studies. "grouped" is the default
    # big/small policy; "recency" and "size" keep ``max_units`` units overall
    # (default 2 * keep_per_group); "none" disables pruning.
    prune_strategy: str = "grouped"
    max_units: int | None = None
    text_mode: str = "title+terms"

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        for name in ("big_threshold", "keep_per_group", "top_k_terms"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.prune_strategy not in PRUNE_STRATEGIES:
            raise ValueError(f"prune_strategy must be one of {PRUNE_STRATEGIES}")
        if self.max_units is not None and self.max_units < 1:
            raise ValueError("max_units must be positive")
        if self.text_mode not in TEXT_MODES:
            raise ValueError(f"text_mode must be one of {TEXT_MODES}")

    @property
    def overall_limit(self) -> int:
        return self.max_units if self.max_units is not None else 2 * self.keep_per_group

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "big_threshold": self.big_threshold,
            "keep_per_group": self.keep_per_group,
            "top_k_terms": self.top_k_terms,
            "prune_strategy": self.prune_strategy,
            "max_units": self.max_units,
            "text_mode": self.text_mode,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> UnitConfig:
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class UnitFeatures:
    size: int
    last_update: int


@dataclass(frozen=True, eq=False)
class InterestUnit:
    """One interest. Instances are never mutated; updates build a replacement."""

    unit_id: str
    member_doc_ids: tuple[str, ...]
    last_title: str
    term_counts: TermCounts
    features: UnitFeatures
    embedding: np.ndarray
    # internal bookkeeping, not part of [F]
    created_seq: int
    last_doc_id: str

    @property
    def size(self) -> int:
        return self.features.size

    @property
    def last_update(self) -> int:
        return self.features.last_update

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InterestUnit):
            return NotImplemented
        return (
            self.unit_id == other.unit_id
            and self.member_doc_ids == other.member_doc_ids
            and self.last_title == other.last_title
            and self.term_counts == other.term_counts
            and self.features == other.features
            and self.created_seq == other.created_seq
            and self.last_doc_id == other.last_doc_id
            and self.embedding.dtype == other.embedding.dtype
            and np.array_equal(self.embedding, other.embedding)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(eq=False)
class UserProfile:
    user_id: str
    units: list[InterestUnit] = field(default_factory=list)
    # doc_id -> timestamp of the latest applied click, pruned documents included
    history: dict[str, int] = field(default_factory=dict)
    next_seq: int = 0
    embedder_id: str | None = None

    def copy(self) -> UserProfile:
        return UserProfile(self.user_id, list(self.units), dict(self.history), self.next_seq, self.embedder_id)

    def member_ids(self) -> set[str]:
        return {d for u in self.units for d in u.member_doc_ids}

    def unit_matrix(self) -> np.ndarray:
        if not self.units:
            return np.zeros((0, 0))
        return np.vstack([u.embedding for u in self.units])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, UserProfile):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and self.units == other.units
            and self.history == other.history
            and self.next_seq == other.next_seq
            and self.embedder_id == other.embedder_id
        )

    def __len__(self) -> int:
        return len(self.units)


def contextual_text(unit: InterestUnit, config: UnitConfig = UnitConfig()) -> str:
    """Serialize a unit as ``"{title} | {term1} {term2} ..."``."""
    terms = " ".join(top_terms(unit.term_counts, config.top_k_terms)) if unit.term_counts else ""
    if config.text_mode == "title":
        return unit.last_title
    if config.text_mode == "terms":
        return terms
    return f"{unit.last_title} | {terms}"


def _unit_id(user_id: str, doc_id: str) -> str:
    digest = hashlib.blake2b(f"{user_id}\x1f{doc_id}".encode(), digest_size=8).hexdigest()
    return f"u{digest}"


def _with_embedding(unit: InterestUnit, embedder: Embedder, config: UnitConfig) -> InterestUnit:
    return replace(unit, embedding=embedder.embed(contextual_text(unit, config)))


def new_unit(user_id: str, doc: Document, seq: int, embedder: Embedder, config: UnitConfig) -> InterestUnit:
    unit = InterestUnit(
        unit_id=_unit_id(user_id, doc.doc_id),
        member_doc_ids=(doc.doc_id,),
        last_title=doc.title,
        term_counts=dict(doc.key_terms),
        features=UnitFeatures(size=1, last_update=doc.timestamp),
        embedding=np.zeros(0),
        created_seq=seq,
        last_doc_id=doc.doc_id,
    )
    return _with_embedding(unit, embedder, config)


def _latest_title(units: Iterable[InterestUnit], doc: Document) -> tuple[str, str]:
    # (timestamp, doc_id) decides which title is the most recent click
    best = (doc.timestamp, doc.doc_id, doc.title)
    for u in units:
        cand = (u.last_update, u.last_doc_id, u.last_title)
        if cand[:2] > best[:2]:
            best = cand
    return best[2], best[1]


def merge_units(
    doc: Document,
    units: Sequence[InterestUnit],
    embedder: Embedder,
    config: UnitConfig = UnitConfig(),
) -> InterestUnit:
    """Fold ``doc`` and every unit in ``units`` into a single unit.

    The merged unit keeps the identity of the oldest-created input unit.
    """
    if not units:
        raise ValueError("merge_units needs at least one unit")
    ordered = sorted(units, key=lambda u: u.created_seq)
    oldest = ordered[0]
    members: list[str] = []
    counts: TermCounts = {}
    for u in ordered:
        members.extend(u.member_doc_ids)
        counts = merge_term_counts(counts, u.term_counts)
    members.append(doc.doc_id)
    counts = merge_term_counts(counts, doc.key_terms)
    title, last_doc = _latest_title(ordered, doc)
    merged = InterestUnit(
        unit_id=oldest.unit_id,
        member_doc_ids=tuple(members),
        last_title=title,
        term_counts=counts,
        features=UnitFeatures(
            size=sum(u.size for u in ordered) + 1,
            last_update=max(max(u.last_update for u in ordered), doc.timestamp),
        ),
        embedding=oldest.embedding,
        created_seq=oldest.created_seq,
        last_doc_id=last_doc,
    )
    return _with_embedding(merged, embedder, config)


def _touch(unit: InterestUnit, doc: Document, embedder: Embedder, config: UnitConfig) -> InterestUnit:
    title, last_doc = _latest_title([unit], doc)
    touched = replace(
        unit,
        last_title=title,
        last_doc_id=last_doc,
        features=UnitFeatures(unit.size, max(unit.last_update, doc.timestamp)),
    )
    if title == unit.last_title:
        return touched
    return _with_embedding(touched, embedder, config)


def prune(profile: UserProfile, config: UnitConfig = UnitConfig(), protect: str | None = None) -> UserProfile:
    """Drop units beyond the retention policy, in place. Returns ``profile``.

    ``protect`` names a unit that ranks ahead of its group regardless of
    last-update time; update_profile passes the unit that absorbed the
    current click so a tie on timestamps can never evict it.
    """
    units = profile.units
    strategy = config.prune_strategy
    if strategy == "none":
        return profile

    def recency(u: InterestUnit) -> tuple:
        return (u.unit_id != protect, -u.last_update, u.unit_id)

    if strategy == "grouped":
        if len(units) <= config.keep_per_group:
            return profile
        big = sorted((u for u in units if u.size >= config.big_threshold), key=recency)
        small = sorted((u for u in units if u.size < config.big_threshold), key=recency)
        keep = big[: config.keep_per_group] + small[: config.keep_per_group]
    else:
        if len(units) <= config.overall_limit:
            return profile
        if strategy == "recency":
            keep = sorted(units, key=recency)
        else:
            keep = sorted(units, key=lambda u: (u.unit_id != protect, -u.size, -u.last_update, u.unit_id))
        keep = keep[: config.overall_limit]
    kept = {id(u) for u in keep}
    profile.units = [u for u in units if id(u) in kept]
    return profile


def update_profile(
    profile: UserProfile,
    doc: Document,
    embedder: Embedder,
    config: UnitConfig = UnitConfig(),
) -> UserProfile:
    """Apply one click to ``profile`` in place and return it.

    A repeat of an already-applied click (same document, timestamp not newer
    than the recorded one) raises :class:`DuplicateEventError` without
    touching the profile. A newer re-click of a document still held by a unit
    refreshes that unit's title and last-update time only.
    """
    seen = profile.history.get(doc.doc_id)
    if seen is not None and doc.timestamp <= seen:
        raise DuplicateEventError(
            f"user {profile.user_id!r}: click on {doc.doc_id!r} at {doc.timestamp} already applied"
        )
    if profile.embedder_id is None:
        profile.embedder_id = embedder.fingerprint

    if seen is not None:
        for i, unit in enumerate(profile.units):
            if doc.doc_id in unit.member_doc_ids:
                profile.units[i] = _touch(unit, doc, embedder, config)
                profile.history[doc.doc_id] = doc.timestamp
                return prune(profile, config, protect=unit.unit_id)

    relevant: list[InterestUnit] = []
    if profile.units:
        doc_vec = embedder.embed(doc.title)
        sims = profile.unit_matrix() @ doc_vec
        relevant = [u for u, s in zip(profile.units, sims) if s >= config.tau]

    if relevant:
        merged = merge_units(doc, relevant, embedder, config)
        gone = {id(u) for u in relevant}
        units = [u for u in profile.units if id(u) not in gone]
        units.append(merged)
        units.sort(key=lambda u: u.created_seq)
        profile.units = units
        absorber = merged.unit_id
    else:
        fresh = new_unit(profile.user_id, doc, profile.next_seq, embedder, config)
        profile.units.append(fresh)
        profile.next_seq += 1
        absorber = fresh.unit_id
    profile.history[doc.doc_id] = doc.timestamp
    return prune(profile, config, protect=absorber)


def build_profile(
    user_id: str,
    docs: Iterable[Document],
    embedder: Embedder,
    config: UnitConfig = UnitConfig(),
    profile: UserProfile | None = None,
) -> UserProfile:
    """Replay ``docs`` (already in click order) onto a profile, skipping duplicates."""
    profile = profile if profile is not None else UserProfile(user_id)
    for doc in docs:
        try:
            update_profile(profile, doc, embedder, config)
        except DuplicateEventError:
            pass
    return profile


# -- persistence ------------------------------------------------------------


def _unit_to_dict(u: InterestUnit) -> dict:
    return {
        "unit_id": u.unit_id,
        "member_doc_ids": list(u.member_doc_ids),
        "last_title": u.last_title,
        "last_doc_id": u.last_doc_id,
        "term_counts": u.term_counts,
        "features": {"size": u.size, "last_update": u.last_update},
        "created_seq": u.created_seq,
        "embedding": [float(x) for x in u.embedding],
    }


def _unit_from_dict(d: Mapping) -> InterestUnit:
    return InterestUnit(
        unit_id=str(d["unit_id"]),
        member_doc_ids=tuple(str(x) for x in d["member_doc_ids"]),
        last_title=str(d["last_title"]),
        term_counts={str(k): int(v) for k, v in d["term_counts"].items()},
        features=UnitFeatures(int(d["features"]["size"]), int(d["features"]["last_update"])),
        embedding=np.asarray(d["embedding"], dtype=np.float64),
        created_seq=int(d["created_seq"]),
        last_doc_id=str(d["last_doc_id"]),
    )


def profile_to_dict(profile: UserProfile) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "user_id": profile.user_id,
        "embedder_id": profile.embedder_id,
        "next_seq": profile.next_seq,
        "history": profile.history,
        "units": [_unit_to_dict(u) for u in profile.units],
    }


def profile_from_dict(data: Mapping) -> UserProfile:
    version = data.get("version")
    if version != SNAPSHOT_VERSION:
        raise SnapshotVersionError(f"unsupported snapshot version {version!r} (expected {SNAPSHOT_VERSION})")
    try:
        return UserProfile(
            user_id=str(data["user_id"]),
            units=[_unit_from_dict(u) for u in data["units"]],
            history={str(k): int(v) for k, v in data.get("history", {}).items()},
            next_seq=int(data.get("next_seq", 0)),
            embedder_id=data.get("embedder_id"),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SnapshotError(f"corrupt snapshot: {exc}") from exc


def snapshot(profile: UserProfile) -> bytes:
    return json.dumps(profile_to_dict(profile), separators=(",", ":")).encode("utf-8")


def restore(payload: bytes) -> UserProfile:
    try:
        data = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"corrupt snapshot: {exc}") from exc
    if not isinstance(data, dict):
        raise SnapshotError("corrupt snapshot: not a JSON object")
    return profile_from_dict(data)


class ProfileStore:
    """Thread-safe collection of user profiles.

    Writers to one user are serialized by a per-user lock; different users
    update in parallel. Readers get a copy that later writes do not affect.
    """

    def __init__(
        self,
        embedder: Embedder,
        config: UnitConfig = UnitConfig(),
        profiles: Mapping[str, UserProfile] | None = None,
    ) -> None:
        self.embedder = embedder
        self.config = config
        self._profiles: dict[str, UserProfile] = dict(profiles or {})
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _lock_for(self, user_id: str) -> threading.Lock:
        with self._guard:
            lock = self._locks.get(user_id)
            if lock is None:
                lock = self._locks[user_id] = threading.Lock()
            return lock

    def __contains__(self, user_id: str) -> bool:
        return user_id in self._profiles

    def __len__(self) -> int:
        return len(self._profiles)

    def user_ids(self) -> list[str]:
        return sorted(self._profiles)

    def get(self, user_id: str) -> UserProfile:
        profile = self._profiles.get(user_id)
        if profile is None:
            raise KeyError(user_id)
        with self._lock_for(user_id):
            return profile.copy()

    def ensure(self, user_id: str) -> None:
        with self._guard:
            self._profiles.setdefault(user_id, UserProfile(user_id))

    def update(self, user_id: str, doc: Document) -> UserProfile:
        """Apply a click; raises DuplicateEventError for replayed events."""
        with self._lock_for(user_id):
            current = self._profiles.get(user_id) or UserProfile(user_id)
            working = current.copy()
            update_profile(working, doc, self.embedder, self.config)
            self._profiles[user_id] = working
            return working.copy()

    def items(self) -> Iterator[tuple[str, UserProfile]]:
        for user_id in self.user_ids():
            yield user_id, self.get(user_id)

    def save(self, path: str | Path) -> None:
        """Write one JSON snapshot per line, users in id order."""
        tmp = Path(f"{path}.tmp")
        with open(tmp, "wb") as fh:
            for _, profile in self.items():
                fh.write(snapshot(profile) + b"\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder, config: UnitConfig = UnitConfig()) -> ProfileStore:
        profiles: dict[str, UserProfile] = {}
        with open(path, "rb") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    profile = restore(line)
                except SnapshotError as exc:
                    raise type(exc)(f"{path}:{lineno}: {exc}") from exc
                profiles[profile.user_id] = profile
        return cls(embedder, config, profiles)
