"""JSON-lines readers and writers for corpora and click logs.

Corpus line:     {"doc_id": str, "title": str, "timestamp": int}
Click-log line:  {"user_id": str, "doc_id": str, "title": str, "timestamp": int}
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .keyterm import KeyTermExtractor, StopwordExtractor
from .units import Document


class DataFormatError(ValueError):
    """A line of an input file could not be parsed."""


@dataclass(frozen=True)
class Click:
    user_id: str
    doc_id: str
    title: str
    timestamp: int

    def to_document(self, extractor: KeyTermExtractor | None = None) -> Document:
        return Document.create(self.doc_id, self.title, self.timestamp, extractor)

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "doc_id": self.doc_id, "title": self.title, "timestamp": self.timestamp}


def _records(path: str | Path, required: tuple[str, ...]) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DataFormatError(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in required if k not in rec]
            if missing:
                raise DataFormatError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            yield lineno, rec


def read_corpus(path: str | Path, extractor: KeyTermExtractor | None = None) -> list[Document]:
    extractor = extractor or StopwordExtractor()
    docs = []
    for lineno, rec in _records(path, ("doc_id", "title")):
        try:
            docs.append(Document.create(str(rec["doc_id"]), str(rec["title"]), int(rec.get("timestamp", 0)), extractor))
        except (TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return docs


def read_clicks(path: str | Path) -> list[Click]:
    clicks = []
    for lineno, rec in _records(path, ("user_id", "doc_id", "timestamp")):
        try:
            clicks.append(Click(str(rec["user_id"]), str(rec["doc_id"]), str(rec.get("title", "")), int(rec["timestamp"])))
        except (TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return clicks


def write_jsonl(path: str | Path, records: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_corpus(path: str | Path, docs: Iterable[Document]) -> None:
    write_jsonl(path, ({"doc_id": d.doc_id, "title": d.title, "timestamp": d.timestamp} for d in docs))


def write_clicks(path: str | Path, clicks: Iterable[Click]) -> None:
    write_jsonl(path, (c.to_dict() for c in clicks))


def group_by_user(clicks: Iterable[Click]) -> dict[str, list[Click]]:
    """Per-user click lists in chronological order (ties by doc_id)."""
    grouped: dict[str, list[Click]] = defaultdict(list)
    for c in clicks:
        grouped[c.user_id].append(c)
    return {u: sorted(cs, key=lambda c: (c.timestamp, c.doc_id)) for u, cs in sorted(grouped.items())}


def corpus_from_clicks(clicks: Iterable[Click], extractor: KeyTermExtractor | None = None) -> list[Document]:
    """Distinct documents referenced by a click log; first-seen title wins."""
    docs: dict[str, Document] = {}
    for c in sorted(clicks, key=lambda c: (c.timestamp, c.doc_id)):
        if c.doc_id not in docs:
            docs[c.doc_id] = c.to_document(extractor)
    return [docs[k] for k in sorted(docs)]
