"""Exact cosine-similarity retrieval over chunk embeddings."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Chunk

__all__ = [
    "BuildError",
    "RetrievalError",
    "RetrievalResult",
    "VectorIndex",
    "build_index",
    "cosine_similarity",
    "load_index",
    "save_index",
    "top_n_chunks",
]

Embedder = Callable[[Sequence[str]], Sequence[Sequence[float]]]


class BuildError(RuntimeError):
    def __init__(self, message: str, chunk_ref: tuple[str, int] | None = None):
        super().__init__(message)
        self.chunk_ref = chunk_ref


class RetrievalError(RuntimeError):
    pass


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("embedding must be a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding has non-finite entries")
    return arr


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``, clamped to [-1, 1].

    A zero-norm vector is an error rather than similarity 0: it means the
    embedding backend returned something degenerate.
    """
    a, b = _as_vector(u), _as_vector(v)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm embedding")
    return max(-1.0, min(1.0, float(np.dot(a, b)) / (na * nb)))


@dataclass(frozen=True)
class RetrievalResult:
    ranked: tuple[tuple[Chunk, float], ...]

    @property
    def chunks(self) -> list[Chunk]:
        return [c for c, _ in self.ranked]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.ranked]

    def __len__(self) -> int:
        return len(self.ranked)


class VectorIndex:
    """Read-only matrix of unit-normalised chunk embeddings."""

    def __init__(self, chunks: Sequence[Chunk], vectors: np.ndarray):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(chunks) or len(chunks) == 0:
            raise BuildError("index needs one vector per chunk and at least one chunk")
        norms = np.linalg.norm(vectors, axis=1)
        bad = np.flatnonzero((norms == 0) | ~np.all(np.isfinite(vectors), axis=1))
        if bad.size:
            raise BuildError("degenerate embedding", chunks[int(bad[0])].ref)
        self._chunks = tuple(chunks)
        self._raw = vectors
        self._raw.setflags(write=False)
        self._unit = vectors / norms[:, None]
        self._unit.setflags(write=False)
        # tie-break order: ascending chunk_id, then doc_id
        self._tiebreak = np.array(
            sorted(range(len(chunks)), key=lambda i: (chunks[i].chunk_id, chunks[i].doc_id)), dtype=np.intp
        )

    @property
    def dim(self) -> int:
        return self._raw.shape[1]

    @property
    def chunks(self) -> tuple[Chunk, ...]:
        return self._chunks

    @property
    def vectors(self) -> np.ndarray:
        return self._raw

    @property
    def doc_ids(self) -> frozenset[str]:
        return frozenset(c.doc_id for c in self._chunks)

    def __len__(self) -> int:
        return len(self._chunks)

    def search(self, query_vector, n: int) -> RetrievalResult:
        if n < 1:
            raise ValueError(f"n must be a positive integer, got {n}")
        q = _as_vector(query_vector)
        if q.size != self.dim:
            raise ValueError(f"query dimension {q.size} does not match index dimension {self.dim}")
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise ValueError("zero-norm query embedding")
        sims = np.clip(self._unit @ (q / qn), -1.0, 1.0)
        # stable sort on -score over rows pre-ordered by the tie-break key
        order = self._tiebreak[np.argsort(-sims[self._tiebreak], kind="stable")]
        top = order[: min(n, len(self._chunks))]
        return RetrievalResult(tuple((self._chunks[i], float(sims[i])) for i in top))


def build_index(chunks: Sequence[Chunk], embedder: Embedder, batch_size: int = 64) -> VectorIndex:
    """Embed every chunk and freeze the result into a :class:`VectorIndex`."""
    if not chunks:
        raise BuildError("cannot build an index over zero chunks")
    rows: list[list[float]] = []
    dim = None
    for lo in range(0, len(chunks), batch_size):
        batch = chunks[lo : lo + batch_size]
        try:
            vecs = list(embedder([c.text for c in batch]))
        except Exception as exc:
            raise BuildError(f"embedding failed for chunk {batch[0].ref}: {exc}", batch[0].ref) from exc
        if len(vecs) != len(batch):
            raise BuildError(f"embedder returned {len(vecs)} vectors for {len(batch)} chunks", batch[0].ref)
        for chunk, vec in zip(batch, vecs):
            vec = list(vec)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise BuildError(f"mixed embedding dimensions: {len(vec)} vs {dim}", chunk.ref)
            rows.append(vec)
    return VectorIndex(chunks, np.asarray(rows, dtype=np.float64))


def top_n_chunks(query: str, n: int, index: VectorIndex, embedder: Embedder) -> RetrievalResult:
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    if len(index) == 0:
        raise RetrievalError("index is empty")
    try:
        (qvec,) = list(embedder([query]))
    except Exception as exc:
        raise RetrievalError(f"query embedding failed: {exc}") from exc
    return index.search(qvec, n)


# ---------------------------------------------------------------------------
# Persistence: MAGIC, u32 header length, JSON header, little-endian float32 rows

MAGIC = b"RGIDX001"


def save_index(index: VectorIndex, path: str | Path) -> None:
    header = json.dumps(
        {
            "version": 1,
            "dim": index.dim,
            "count": len(index),
            "chunks": [c.to_dict() for c in index.chunks],
        },
        ensure_ascii=False,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(index.vectors.astype("<f4").tobytes())


def load_index(path: str | Path) -> VectorIndex:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a reportgen index file")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    off = len(MAGIC) + 4
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    dim, count = header["dim"], header["count"]
    body = np.frombuffer(data, dtype="<f4", offset=off + hlen)
    if body.size != dim * count:
        raise ValueError(f"{path}: vector payload does not match header")
    chunks = [
        Chunk(c["chunk_id"], c["doc_id"], c["char_start"], c["char_end"], c["text"]) for c in header["chunks"]
    ]
    return VectorIndex(chunks, body.reshape(count, dim).astype(np.float64))
