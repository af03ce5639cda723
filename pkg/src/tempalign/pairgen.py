"""Construction of the supervised cross-lingual training set.

For every low-resource query we keep its top-h most similar entries from the
translated rich pool plus w uniform draws from the remainder, label each pair
with the in-language cosine similarity, and then swap the translated ids back
to the original rich-language ids. Labels are computed before substitution
and unchanged by it.

Random draws use NumPy's PCG64 generator. Each low query gets its own
substream derived from (seed, sha256(low_id)), so per-query work can run in
parallel and still reproduce the sequential output exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import IO, Mapping, Sequence

import numpy as np

from .corpus import CorpusSplit
from .embedstore import EmbeddingStore, clamp_similarity, rank_candidates
from .errors import DataError

PROVENANCE_TOP = "top-h"
PROVENANCE_RANDOM = "random-w"


@dataclass(frozen=True)
class ScoredPair:
    """(low query, rich query) with its in-language similarity label."""

    low_id: str
    rich_id: str
    label: float
    provenance: str

    def __post_init__(self) -> None:
        if self.provenance not in (PROVENANCE_TOP, PROVENANCE_RANDOM):
            raise DataError(f"invalid provenance {self.provenance!r}")
        object.__setattr__(self, "label", clamp_similarity(self.label))


@dataclass(frozen=True)
class TrainingSet:
    pairs: tuple[ScoredPair, ...]
    h: int
    w: int
    seed: int
    source: str = ""

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def query_rng(seed: int, low_id: str) -> np.random.Generator:
    """Per-query PCG64 substream derived from (seed, sha256(low_id))."""
    digest = hashlib.sha256(low_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed, *words]))


def score_in_language(
    low_store: EmbeddingStore,
    translated_store: EmbeddingStore,
    low_id: str,
) -> list[tuple[str, float]]:
    """Cosine of one low query against every translated rich entry, store order."""
    if low_store.dim != translated_store.dim:
        raise DataError(
            f"store dims differ: {low_store.dim} vs {translated_store.dim}"
        )
    query = low_store.vector(low_id).astype(np.float64)
    nq = float(np.linalg.norm(query))
    if nq < 1e-12:
        raise DataError(f"zero vector for low id {low_id!r}")
    mat = translated_store.matrix.astype(np.float64, copy=False)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms < 1e-12):
        bad = translated_store.ids[int(np.argmin(norms))]
        raise DataError(f"zero vector for translated id {bad!r}")
    sims = (mat @ query) / (norms * nq)
    return [
        (id_, clamp_similarity(s)) for id_, s in zip(translated_store.ids, sims)
    ]


def build_pairs(
    low_split: CorpusSplit,
    low_store: EmbeddingStore,
    translated_store: EmbeddingStore,
    rich_id_map: Mapping[str, str],
    h: int,
    w: int,
    seed: int,
) -> TrainingSet:
    """Per low query: top-h by in-language score plus w seeded random draws.

    When the pool is smaller than h + w, all candidates are taken. Every
    emitted rich id is the mapped original-language id.
    """
    if h < 0 or w < 0 or h + w < 1:
        raise DataError(f"need h >= 0, w >= 0, h + w >= 1; got h={h}, w={w}")
    if len(translated_store) == 0:
        raise DataError("translated store is empty")
    missing = [t for t in translated_store.ids if t not in rich_id_map]
    if missing:
        raise DataError(f"rich id map missing translated ids (first: {missing[0]!r})")

    pairs: list[ScoredPair] = []
    for rec in low_split:
        scores = dict(score_in_language(low_store, translated_store, rec.id))
        take_top = min(h, len(translated_store))
        top_ids: list[str] = []
        if take_top:
            top = rank_candidates(
                low_store.vector(rec.id),
                translated_store.ids,
                translated_store.matrix,
                take_top,
            )
            top_ids = [id_ for id_, _ in top]
        chosen = set(top_ids)
        remainder = [t for t in translated_store.ids if t not in chosen]
        take_rand = min(w, len(remainder))
        random_ids: list[str] = []
        if take_rand:
            rng = query_rng(seed, rec.id)
            picks = rng.choice(len(remainder), size=take_rand, replace=False)
            random_ids = [remainder[int(p)] for p in picks]

        emitted: set[str] = set()
        for translated_id, provenance in [
            *((t, PROVENANCE_TOP) for t in top_ids),
            *((t, PROVENANCE_RANDOM) for t in random_ids),
        ]:
            rich_id = rich_id_map[translated_id]
            if rich_id in emitted:
                raise DataError(
                    f"rich id map collision: {rich_id!r} emitted twice for query {rec.id!r}"
                )
            emitted.add(rich_id)
            pairs.append(
                ScoredPair(
                    low_id=rec.id,
                    rich_id=rich_id,
                    label=scores[translated_id],
                    provenance=provenance,
                )
            )
    return TrainingSet(
        pairs=tuple(pairs), h=h, w=w, seed=seed, source=f"{low_split.split}:{low_split.language}"
    )


def split_train_val(
    training_set: TrainingSet, val_fraction: float = 0.10, seed: int = 0
) -> tuple[TrainingSet, TrainingSet]:
    """Seeded shuffle into disjoint, exhaustive train/validation subsets."""
    if not 0.0 < val_fraction < 1.0:
        raise DataError(f"val fraction must be in (0, 1), got {val_fraction}")
    n = len(training_set)
    if n < 2:
        raise DataError(f"need at least 2 pairs to split, got {n}")
    n_val = int(round(n * val_fraction))
    n_val = max(1, min(n - 1, n_val))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(int(i) for i in perm[:n_val])
    train_pairs = tuple(p for i, p in enumerate(training_set.pairs) if i not in val_idx)
    val_pairs = tuple(p for i, p in enumerate(training_set.pairs) if i in val_idx)
    mk = lambda ps: TrainingSet(
        pairs=ps, h=training_set.h, w=training_set.w, seed=training_set.seed,
        source=training_set.source,
    )
    return mk(train_pairs), mk(val_pairs)


def concat_training_sets(sets: Sequence[TrainingSet]) -> TrainingSet:
    """Concatenate per-task/per-language sets for integrated training."""
    if not sets:
        raise DataError("no training sets to concatenate")
    pairs = tuple(p for s in sets for p in s.pairs)
    first = sets[0]
    return TrainingSet(
        pairs=pairs, h=first.h, w=first.w, seed=first.seed,
        source="+".join(s.source for s in sets),
    )


def save_training_set(training_set: TrainingSet, sink: IO[bytes]) -> None:
    """JSONL: one header line with h/w/seed, then one line per pair."""
    header = {
        "h": training_set.h,
        "w": training_set.w,
        "seed": training_set.seed,
        "source": training_set.source,
    }
    sink.write(json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8"))
    sink.write(b"\n")
    for pair in training_set.pairs:
        row = {
            "low_id": pair.low_id,
            "rich_id": pair.rich_id,
            "label": pair.label,
            "provenance": pair.provenance,
        }
        sink.write(json.dumps(row, ensure_ascii=False, sort_keys=True).encode("utf-8"))
        sink.write(b"\n")


def load_training_set(source: IO[bytes]) -> TrainingSet:
    lines = source.read().decode("utf-8").splitlines()
    if not lines:
        raise DataError("empty training-set file")
    try:
        header = json.loads(lines[0])
        pairs = tuple(
            ScoredPair(
                low_id=obj["low_id"],
                rich_id=obj["rich_id"],
                label=obj["label"],
                provenance=obj["provenance"],
            )
            for obj in map(json.loads, lines[1:])
            if obj
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed training-set file: {exc}") from exc
    return TrainingSet(
        pairs=pairs,
        h=header["h"],
        w=header["w"],
        seed=header["seed"],
        source=header.get("source", ""),
    )
