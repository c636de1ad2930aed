"""Shared checkers for unit-store invariants and the retrieval oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from interest_retrieval.embedding import Embedder
from interest_retrieval.units import (
    Document,
    DuplicateEventError,
    UnitConfig,
    UserProfile,
    contextual_text,
    update_profile,
)


@dataclass
class StreamCheck:
    events: int = 0
    duplicates: int = 0
    merges: int = 0
    violations: list[str] | None = None

    def __post_init__(self) -> None:
        self.violations = []


def check_stream(user_id: str, docs: list[Document], embedder: Embedder, config: UnitConfig) -> tuple[UserProfile, StreamCheck]:
    """Apply ``docs`` one by one, checking every invariant after each event."""
    profile = UserProfile(user_id)
    report = StreamCheck()
    bad = report.violations
    for doc in docs:
        before = profile.copy()
        live_before = {m for u in before.units for m in u.member_doc_ids}
        try:
            update_profile(profile, doc, embedder, config)
        except DuplicateEventError:
            report.duplicates += 1
            if profile != before:
                bad.append(f"{doc.doc_id}: duplicate event changed the profile")
            continue
        report.events += 1
        members = [m for u in profile.units for m in u.member_doc_ids]
        live = set(members)
        holders = [u for u in profile.units if doc.doc_id in u.member_doc_ids]
        if len(holders) != 1:
            bad.append(f"{doc.doc_id}: held by {len(holders)} units")
        if len(members) != len(live):
            bad.append(f"{doc.doc_id}: a document sits in two units")
        if sum(u.size for u in profile.units) != len(live):
            bad.append(f"{doc.doc_id}: sizes do not add up to live documents")
        if any(u.size != len(u.member_doc_ids) for u in profile.units):
            bad.append(f"{doc.doc_id}: size differs from member count")
        if not live <= live_before | {doc.doc_id}:
            bad.append(f"{doc.doc_id}: unexpected member appeared")
        big = sum(u.size >= config.big_threshold for u in profile.units)
        if config.prune_strategy == "grouped" and (big > config.keep_per_group or len(profile.units) - big > config.keep_per_group):
            bad.append(f"{doc.doc_id}: group bound exceeded")
        if len(profile.units) > 2 * config.keep_per_group:
            bad.append(f"{doc.doc_id}: more than 2*keep_per_group units")
        for u in profile.units:
            if embedder.embed(contextual_text(u, config)).tobytes() != u.embedding.tobytes():
                bad.append(f"{doc.doc_id}: stale embedding on {u.unit_id}")
        if doc.doc_id in live_before:
            continue  # re-click of a held document: a touch, no merge step
        vec = embedder.embed(doc.title)
        pre = {u.unit_id: float(u.embedding @ vec) for u in before.units}
        absorber = holders[0].unit_id if holders else None
        merged = [uid for uid, s in pre.items() if s >= config.tau]
        report.merges += len(merged) > 1
        for u in profile.units:
            if u.unit_id != absorber and pre.get(u.unit_id, -1.0) >= config.tau:
                bad.append(f"{doc.doc_id}: unit {u.unit_id} was similar enough to merge but survived")
    return profile, report


def naive_ranking(profile: UserProfile, doc_ids: list[str], vectors: np.ndarray, exclude_clicked: bool = True) -> list[tuple[str, float]]:
    """Full scan: score every document by a Python-level sum of per-unit dot products."""
    clicked = {m for u in profile.units for m in u.member_doc_ids} if exclude_clicked else set()
    scored = []
    for doc_id, vec in zip(doc_ids, vectors):
        if doc_id in clicked:
            continue
        total = 0.0
        for u in profile.units:
            total += float(np.dot(vec, u.embedding))
        scored.append((doc_id, total))
    scored.sort(key=lambda item: (-round(item[1], 10), item[0]))
    return scored
