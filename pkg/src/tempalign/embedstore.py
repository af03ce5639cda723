"""Dense embedding storage, cosine similarity, and exact top-k search.

Vectors are held as 32-bit floats; all similarity arithmetic accumulates in
64-bit to keep rankings stable near ties. Stores are immutable once built, so
concurrent queries over a shared store are safe.

On-disk format (little-endian): magic "CLTS", u32 version = 1, u32 dim,
u64 count, then per record u32 id-byte-length, the id in UTF-8, and dim
IEEE-754 binary32 components.
"""

from __future__ import annotations

import heapq
import struct
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

STORE_MAGIC = b"CLTS"
STORE_VERSION = 1

# Norms below this are treated as zero vectors.
NORM_EPS = 1e-12
# Cosine may exceed |1| by at most this much before it is considered a bug.
CLAMP_TOL = 1e-6


def clamp_similarity(value: float) -> float:
    """Clamp a similarity to [-1, 1]; reject values beyond float tolerance."""
    if not np.isfinite(value):
        raise DataError(f"similarity is not finite: {value!r}")
    if abs(value) > 1.0 + CLAMP_TOL:
        raise DataError(f"similarity {value!r} outside [-1, 1] beyond tolerance")
    return min(1.0, max(-1.0, float(value)))


def cosine(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> float:
    """Standard cosine similarity, accumulated in float64."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DataError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < NORM_EPS or nv < NORM_EPS:
        raise DataError("cosine undefined for zero vector")
    return clamp_similarity(float(np.dot(u, v)) / (nu * nv))


def cosine_distance(u, v) -> float:
    """Distance form, defined as exactly 1 - cosine(u, v)."""
    return 1.0 - cosine(u, v)


class EmbeddingStore:
    """Immutable, id-indexed matrix of fixed-dimension float32 vectors."""

    def __init__(self, dim: int, ids: Sequence[str], matrix: np.ndarray):
        if dim < 1:
            raise DataError(f"dim must be positive, got {dim}")
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape != (len(ids), dim):
            raise DataError(
                f"matrix shape {matrix.shape} does not match {len(ids)} ids x dim {dim}"
            )
        if not np.all(np.isfinite(matrix)):
            raise DataError("store vectors must be finite (no NaN/Inf)")
        index: dict[str, int] = {}
        for pos, id_ in enumerate(ids):
            if not isinstance(id_, str) or not id_:
                raise DataError(f"invalid id at position {pos}: {id_!r}")
            if id_ in index:
                raise DataError(f"duplicate id {id_!r}")
            index[id_] = pos
        self._dim = dim
        self._ids = tuple(ids)
        self._matrix = matrix.copy()
        self._matrix.setflags(write=False)
        self._index = index

    @classmethod
    def from_items(
        cls, items: Iterable[tuple[str, Sequence[float]]] | Mapping[str, Sequence[float]]
    ) -> "EmbeddingStore":
        if isinstance(items, Mapping):
            items = items.items()
        ids, rows = [], []
        for id_, vec in items:
            ids.append(id_)
            rows.append(np.asarray(vec, dtype=np.float32))
        if not ids:
            raise DataError("cannot infer dimension from an empty store; use __init__")
        dims = {row.shape for row in rows}
        if len(dims) != 1 or rows[0].ndim != 1:
            raise DataError(f"inconsistent vector shapes: {sorted(map(str, dims))}")
        return cls(dim=rows[0].shape[0], ids=ids, matrix=np.stack(rows))

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def matrix(self) -> np.ndarray:
        """Read-only (n, dim) float32 matrix in id order."""
        return self._matrix

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def vector(self, id_: str) -> np.ndarray:
        try:
            return self._matrix[self._index[id_]]
        except KeyError:
            raise DataError(f"unknown id {id_!r}") from None


def rank_candidates(
    query: np.ndarray,
    ids: Sequence[str],
    matrix: np.ndarray,
    k: int,
    exclude_ids: Iterable[str] = (),
) -> list[tuple[str, float]]:
    """Exact top-k over candidate rows: scan similarities, keep a bounded heap.

    Returns min(k, available) pairs with non-increasing score; equal scores
    are broken by ascending id so every result is a total, reproducible order.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != matrix.shape[1]:
        raise DataError(f"query dim {query.shape} does not match store dim {matrix.shape[1]}")
    nq = float(np.linalg.norm(query))
    if nq < NORM_EPS:
        raise DataError("cosine undefined for zero query vector")
    excluded = set(exclude_ids)
    keep = [i for i, id_ in enumerate(ids) if id_ not in excluded]
    if not keep:
        raise DataError("no candidates left after exclusion")
    mat = matrix[keep].astype(np.float64, copy=False)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms < NORM_EPS):
        bad = ids[keep[int(np.argmin(norms))]]
        raise DataError(f"cosine undefined for zero candidate vector {bad!r}")
    sims = (mat @ query) / (norms * nq)
    best = heapq.nsmallest(
        min(k, len(keep)), range(len(keep)), key=lambda j: (-sims[j], ids[keep[j]])
    )
    return [(ids[keep[j]], clamp_similarity(sims[j])) for j in best]


def top_k(
    query: np.ndarray,
    store: EmbeddingStore,
    k: int,
    exclude_ids: Iterable[str] = (),
) -> list[tuple[str, float]]:
    """Exact top-k cosine search over a store."""
    return rank_candidates(query, store.ids, store.matrix, k, exclude_ids)


def save_store(store: EmbeddingStore, sink: IO[bytes]) -> None:
    """Write the binary store format; round-trips bit-exactly."""
    sink.write(STORE_MAGIC)
    sink.write(struct.pack("<IIQ", STORE_VERSION, store.dim, len(store)))
    for id_, row in zip(store.ids, store.matrix):
        raw = id_.encode("utf-8")
        sink.write(struct.pack("<I", len(raw)))
        sink.write(raw)
        sink.write(row.astype("<f4").tobytes())


def save_store_file(store: EmbeddingStore, path) -> None:
    with open(path, "wb") as fh:
        save_store(store, fh)


def _read_exact(source: IO[bytes], n: int, offset: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise DataError(
            f"truncated store: expected {n} bytes for {what} at offset {offset}, got {len(data)}"
        )
    return data


def load_store(source: IO[bytes]) -> EmbeddingStore:
    """Read the binary store format, validating magic, version, and length."""
    offset = 0
    magic = source.read(4)
    if magic != STORE_MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {STORE_MAGIC!r}")
    offset += 4
    header = _read_exact(source, 16, offset, "header")
    version, dim, count = struct.unpack("<IIQ", header)
    offset += 16
    if version != STORE_VERSION:
        raise DataError(f"unsupported store version {version}, expected {STORE_VERSION}")
    if dim < 1:
        raise DataError(f"invalid dim {dim} in header")
    ids: list[str] = []
    rows = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        raw_len = _read_exact(source, 4, offset, f"id length of record {i}")
        offset += 4
        (id_len,) = struct.unpack("<I", raw_len)
        raw_id = _read_exact(source, id_len, offset, f"id of record {i}")
        offset += id_len
        raw_vec = _read_exact(source, 4 * dim, offset, f"vector of record {i}")
        offset += 4 * dim
        ids.append(raw_id.decode("utf-8"))
        rows[i] = np.frombuffer(raw_vec, dtype="<f4")
    trailing = source.read(1)
    if trailing:
        raise DataError(f"unexpected trailing bytes at offset {offset}")
    return EmbeddingStore(dim=dim, ids=ids, matrix=rows)


def load_store_file(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        return load_store(fh)
