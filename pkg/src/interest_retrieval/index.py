"""Document vector index: exact full scan and an inverted-file approximate mode.

Documents are stored sorted by ``doc_id`` so that row order doubles as the
tie-break order: equal scores always resolve to the smaller ``doc_id``.

The approximate mode partitions vectors with spherical k-means and scans only
the ``nprobe`` partitions whose centroids are most similar to the query.
An index is immutable once built; rebuilding yields a fresh object.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embedding import DimensionMismatchError, Embedder
from .units import Document

MAGIC = b"IRIDX"
FORMAT_VERSION = 1

# Scores are compared after rounding to this many decimals, so values that
# are equal up to floating-point summation order tie and fall back to doc_id.
SCORE_DECIMALS = 10


class IndexBuildError(ValueError):
    pass


class IndexFormatError(ValueError):
    pass


def rank_order(scores: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """Positions sorting ``scores`` descending, ties by ascending row (= doc_id)."""
    keys = np.round(scores, SCORE_DECIMALS)
    if rows is None:
        rows = np.arange(len(scores))
    return np.lexsort((rows, -keys))


@dataclass(frozen=True)
class IVFParams:
    nlist: int | None = None  # partitions; default ~ 4 * sqrt(n)
    nprobe: int = 16
    train_iterations: int = 12
    train_sample: int = 50_000
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "nlist": self.nlist,
            "nprobe": self.nprobe,
            "train_iterations": self.train_iterations,
            "train_sample": self.train_sample,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> IVFParams:
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass(eq=False)
class DocumentIndex:
    doc_ids: list[str]
    vectors: np.ndarray  # (n, d), row i belongs to doc_ids[i]
    docs: list[Document]
    mode: str = "exact"
    embedder_id: str | None = None
    params: IVFParams = field(default_factory=IVFParams)
    centroids: np.ndarray | None = None
    # rows of partition j are list_rows[list_offsets[j]:list_offsets[j + 1]]
    list_rows: np.ndarray | None = None
    list_offsets: np.ndarray | None = None
    _row_of: dict[str, int] = field(init=False, repr=False)
    _list_vectors: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self) -> None:
        self._row_of = {d: i for i, d in enumerate(self.doc_ids)}

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.doc_ids)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._row_of

    def row(self, doc_id: str) -> int:
        return self._row_of[doc_id]

    def rows(self, doc_ids: Iterable[str]) -> np.ndarray:
        row_of = self._row_of
        return np.array([row_of[d] for d in doc_ids], dtype=np.int64)

    def vector(self, doc_id: str) -> np.ndarray:
        return self.vectors[self._row_of[doc_id]]

    def document(self, doc_id: str) -> Document:
        return self.docs[self._row_of[doc_id]]

    def _check(self, query: np.ndarray) -> None:
        if query.shape[-1] != self.dimension:
            raise DimensionMismatchError(
                f"query dimension {query.shape[-1]} does not match index dimension {self.dimension}"
            )

    def _top(self, rows: np.ndarray, sims: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
        """The ``n`` best (rows, rounded scores), best first."""
        keys = np.round(sims, SCORE_DECIMALS)
        if len(rows) > n:
            # keep everything at or above the n-th best rounded score, then sort exactly
            cutoff = np.partition(keys, len(keys) - n)[len(keys) - n]
            mask = keys >= cutoff
            rows, keys = rows[mask], keys[mask]
        order = rank_order(keys, rows)[:n]
        return rows[order], keys[order]

    def search_rows(self, query: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Like :meth:`search`, but returns row positions and scores as arrays."""
        return self.search_rows_many(query[None, :] if query.ndim == 1 else query, n)[0]

    def search_rows_many(self, queries: np.ndarray, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """One (rows, scores) pair per query row; partitions are chosen for all queries at once."""
        if n < 1:
            raise ValueError("n must be positive")
        queries = np.atleast_2d(queries)
        self._check(queries)
        empty = (np.zeros(0, dtype=np.int64), np.zeros(0))
        if len(self.doc_ids) == 0:
            return [empty] * len(queries)
        approximate = self.mode == "approximate" and self.centroids is not None
        probes = self._probe_lists(queries) if approximate else None
        out = []
        for i, q in enumerate(queries):
            if not np.any(q):
                out.append(empty)
            elif probes is None:
                out.append(self._top(np.arange(len(self.doc_ids)), self.vectors @ q, n))
            else:
                out.append(self._top(*self._scan(probes[i], q), n))
        return out

    def search(self, query: np.ndarray, n: int) -> list[tuple[str, float]]:
        """Top ``n`` documents by cosine to ``query`` as (doc_id, similarity)."""
        rows, scores = self.search_rows(query, n)
        ids = self.doc_ids
        return [(ids[r], s) for r, s in zip(rows.tolist(), scores.tolist())]

    def search_many(self, queries: np.ndarray, n: int) -> list[list[tuple[str, float]]]:
        ids = self.doc_ids
        return [[(ids[r], s) for r, s in zip(rows.tolist(), scores.tolist())] for rows, scores in self.search_rows_many(queries, n)]

    def _probe_lists(self, queries: np.ndarray) -> np.ndarray:
        """The ``nprobe`` best partitions per query, shape (queries, nprobe)."""
        assert self.centroids is not None
        nprobe = min(self.params.nprobe, len(self.centroids))
        scores = queries @ self.centroids.T
        if nprobe < scores.shape[1]:
            return np.argpartition(-scores, nprobe - 1, axis=1)[:, :nprobe]
        return np.broadcast_to(np.arange(scores.shape[1]), scores.shape)

    def _scan(self, lists: np.ndarray, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rows and similarities of every document in the given partitions."""
        assert self.list_rows is not None and self.list_offsets is not None
        if self._list_vectors is None:
            # partition-ordered copy so each probe reads one contiguous block
            self._list_vectors = np.ascontiguousarray(self.vectors[self.list_rows])
        offs = self.list_offsets
        spans = [(offs[j], offs[j + 1]) for j in lists.tolist()]
        rows = np.concatenate([self.list_rows[a:b] for a, b in spans])
        sims = np.concatenate([self._list_vectors[a:b] for a, b in spans]) @ query
        return rows, sims

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "mode": self.mode,
            "embedder_id": self.embedder_id,
            "params": self.params.to_dict(),
            "docs": [[d.doc_id, d.title, d.timestamp, d.key_terms] for d in self.docs],
        }
        arrays = {"vectors": self.vectors}
        if self.centroids is not None:
            arrays.update(centroids=self.centroids, list_rows=self.list_rows, list_offsets=self.list_offsets)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        meta_bytes = json.dumps(meta).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC + bytes([FORMAT_VERSION]))
            fh.write(struct.pack("<Q", len(meta_bytes)))
            fh.write(meta_bytes)
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> DocumentIndex:
        with open(path, "rb") as fh:
            raw = fh.read()
        if not raw.startswith(MAGIC):
            raise IndexFormatError(f"{path}: not an index file")
        version = raw[len(MAGIC)]
        if version != FORMAT_VERSION:
            raise IndexFormatError(f"{path}: unsupported index version {version}")
        pos = len(MAGIC) + 1
        (meta_len,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
        arrays = np.load(io.BytesIO(raw[pos + meta_len :]), allow_pickle=False)
        docs = [Document(str(i), t, int(ts), dict(k)) for i, t, ts, k in meta["docs"]]
        return cls(
            doc_ids=[d.doc_id for d in docs],
            vectors=arrays["vectors"],
            docs=docs,
            mode=meta["mode"],
            embedder_id=meta["embedder_id"],
            params=IVFParams.from_dict(meta["params"]),
            centroids=arrays["centroids"] if "centroids" in arrays else None,
            list_rows=arrays["list_rows"] if "list_rows" in arrays else None,
            list_offsets=arrays["list_offsets"] if "list_offsets" in arrays else None,
        )


def _spherical_kmeans(data: np.ndarray, k: int, iterations: int, rng: np.random.Generator) -> np.ndarray:
    # Unique starting points avoid empty clusters from duplicate vectors.
    uniq = np.unique(data, axis=0)
    k = min(k, len(uniq))
    centroids = uniq[rng.choice(len(uniq), size=k, replace=False)]
    for _ in range(iterations):
        assign = np.argmax(data @ centroids.T, axis=1)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, data)
        norms = np.linalg.norm(sums, axis=1)
        empty = norms == 0
        sums[~empty] /= norms[~empty, None]
        sums[empty] = centroids[empty]
        centroids = sums
    return centroids


def build_index(
    docs: Sequence[Document],
    embedder: Embedder,
    mode: str = "exact",
    params: IVFParams | None = None,
    vectors: Mapping[str, np.ndarray] | None = None,
) -> DocumentIndex:
    """Embed every document title and build an index over the vectors.

    ``vectors`` optionally supplies precomputed vectors by doc_id; documents
    missing from it are embedded from their titles.
    """
    if mode not in ("exact", "approximate"):
        raise IndexBuildError(f"unknown index mode {mode!r}")
    params = params or IVFParams()
    seen: set[str] = set()
    for d in docs:
        if d.doc_id in seen:
            raise IndexBuildError(f"duplicate doc_id {d.doc_id!r}")
        seen.add(d.doc_id)
    ordered = sorted(docs, key=lambda d: d.doc_id)
    dim = embedder.dimension
    if ordered:
        mat = np.vstack(
            [
                np.asarray(vectors[d.doc_id], dtype=np.float64)
                if vectors is not None and d.doc_id in vectors
                else embedder.embed(d.title)
                for d in ordered
            ]
        )
        if mat.shape[1] != dim:
            raise DimensionMismatchError(f"precomputed vectors have dimension {mat.shape[1]}, expected {dim}")
    else:
        mat = np.zeros((0, dim))
    index = DocumentIndex(
        doc_ids=[d.doc_id for d in ordered],
        vectors=mat,
        docs=list(ordered),
        mode=mode,
        embedder_id=embedder.fingerprint,
        params=params,
    )
    if mode == "approximate" and len(ordered) > 0:
        _train_ivf(index, params)
    return index


def _train_ivf(index: DocumentIndex, params: IVFParams) -> None:
    mat = index.vectors
    n = len(mat)
    nlist = params.nlist or max(1, int(round(4 * np.sqrt(n))))
    rng = np.random.default_rng(params.seed)
    nonzero = np.flatnonzero(np.any(mat != 0, axis=1))
    if len(nonzero) == 0:
        centroids = np.zeros((1, mat.shape[1]))
        centroids[0, 0] = 1.0
    else:
        sample = nonzero
        if len(sample) > params.train_sample:
            sample = np.sort(rng.choice(nonzero, size=params.train_sample, replace=False))
        centroids = _spherical_kmeans(mat[sample], nlist, params.train_iterations, rng)
    assign = np.empty(n, dtype=np.int64)
    for start in range(0, n, 8192):
        block = mat[start : start + 8192]
        assign[start : start + 8192] = np.argmax(block @ centroids.T, axis=1)
    order = np.argsort(assign, kind="stable")
    counts = np.bincount(assign, minlength=len(centroids))
    index.centroids = centroids
    index.list_rows = order.astype(np.int64)
    index.list_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
