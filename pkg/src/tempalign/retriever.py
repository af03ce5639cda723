"""Selection of K in-context exemplars for a low-resource query.

Four strategies:

* random        - seeded uniform sample without replacement
* cross-lingual - cosine between the query and rich-language embeddings
* in-language   - cosine against translated rich embeddings, then the picks
                  are substituted back to the original rich-language records
* aligned       - cosine after mapping both sides through a trained head

The query's own id is always excluded from the candidate pool, so synthetic
setups cannot self-retrieve. Similarity strategies share the exact top-k tie
rule (descending score, then ascending id).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, IO, Iterable, Mapping, Optional, Sequence

import numpy as np

from .aligner import AlignmentHead
from .corpus import CorpusSplit
from .embedstore import EmbeddingStore, rank_candidates
from .errors import DataError
from .pairgen import query_rng

STRATEGY_RANDOM = "random"
STRATEGY_CROSS_LINGUAL = "cross-lingual"
STRATEGY_IN_LANGUAGE = "in-language"
STRATEGY_ALIGNED = "aligned"
STRATEGIES = (
    STRATEGY_RANDOM,
    STRATEGY_CROSS_LINGUAL,
    STRATEGY_IN_LANGUAGE,
    STRATEGY_ALIGNED,
)


@dataclass(frozen=True)
class ContextExample:
    id: str
    question: str
    answer: str
    score: Optional[float]


@dataclass(frozen=True)
class ContextSet:
    query_id: str
    strategy: str
    k: int
    examples: tuple[ContextExample, ...]

    def __len__(self) -> int:
        return len(self.examples)

    def ids(self) -> tuple[str, ...]:
        return tuple(ex.id for ex in self.examples)


def _as_examples(rich_split: CorpusSplit, picks: Sequence[tuple[str, Optional[float]]]):
    out = []
    for id_, score in picks:
        rec = rich_split.by_id(id_)
        out.append(
            ContextExample(id=id_, question=rec.question, answer=rec.answers[0], score=score)
        )
    return tuple(out)


def select_examples(
    query_id: str,
    low_store: EmbeddingStore,
    rich_split: CorpusSplit,
    rich_store: EmbeddingStore,
    strategy: str,
    k: int = 3,
    *,
    head: Optional[AlignmentHead] = None,
    translated_store: Optional[EmbeddingStore] = None,
    id_map: Optional[Mapping[str, str]] = None,
    seed: Optional[int] = None,
    reverse_order: bool = False,
) -> ContextSet:
    """Pick min(k, pool) exemplars for one query under the given strategy.

    Similarity strategies order exemplars by descending score (flip with
    reverse_order); the random strategy keeps its draw order.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if strategy not in STRATEGIES:
        raise DataError(f"unknown strategy {strategy!r}")

    picks: list[tuple[str, Optional[float]]]
    if strategy == STRATEGY_RANDOM:
        if seed is None:
            raise DataError("random strategy requires a seed")
        pool = [id_ for id_ in rich_store.ids if id_ != query_id]
        if not pool:
            raise DataError("no candidates left after exclusion")
        rng = query_rng(seed, query_id)
        chosen = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        picks = [(pool[int(i)], None) for i in chosen]
    elif strategy == STRATEGY_CROSS_LINGUAL:
        picks = list(
            rank_candidates(
                low_store.vector(query_id), rich_store.ids, rich_store.matrix, k,
                exclude_ids={query_id},
            )
        )
    elif strategy == STRATEGY_IN_LANGUAGE:
        if translated_store is None or id_map is None:
            raise DataError("in-language strategy requires translated_store and id_map")
        missing = [t for t in translated_store.ids if t not in id_map]
        if missing:
            raise DataError(f"id map missing translated ids (first: {missing[0]!r})")
        exclude = {
            t for t in translated_store.ids if t == query_id or id_map[t] == query_id
        }
        ranked = rank_candidates(
            low_store.vector(query_id),
            translated_store.ids,
            translated_store.matrix,
            k,
            exclude_ids=exclude,
        )
        picks = [(id_map[t], score) for t, score in ranked]
    else:  # aligned
        if head is None:
            raise DataError("aligned strategy requires a head")
        if head.dim != low_store.dim or head.dim != rich_store.dim:
            raise DataError("head dim does not match store dims")
        mapped_query = head.matrix @ low_store.vector(query_id).astype(np.float64)
        mapped_pool = rich_store.matrix.astype(np.float64) @ head.matrix.T
        picks = list(
            rank_candidates(mapped_query, rich_store.ids, mapped_pool, k,
                            exclude_ids={query_id})
        )

    if reverse_order:
        picks = picks[::-1]
    return ContextSet(
        query_id=query_id,
        strategy=strategy,
        k=k,
        examples=_as_examples(rich_split, picks),
    )


@dataclass(frozen=True)
class StrategyComparison:
    rows: tuple[dict, ...]
    mean_jaccard: float
    mean_score_gap: Optional[float]


def strategy_report(
    query_ids: Iterable[str],
    select_a: Callable[[str], ContextSet],
    select_b: Callable[[str], ContextSet],
) -> StrategyComparison:
    """Per-query Jaccard overlap of the two selections plus mean score gap.

    The score gap (mean selection score of A minus B) is only defined when
    both strategies produce scores; otherwise it is None.
    """
    rows = []
    gaps = []
    for qid in query_ids:
        sel_a = select_a(qid)
        sel_b = select_b(qid)
        ids_a, ids_b = set(sel_a.ids()), set(sel_b.ids())
        union = ids_a | ids_b
        jaccard = len(ids_a & ids_b) / len(union) if union else 1.0
        row = {"query_id": qid, "jaccard": jaccard, "score_gap": None}
        scores_a = [ex.score for ex in sel_a.examples]
        scores_b = [ex.score for ex in sel_b.examples]
        if None not in scores_a and None not in scores_b and scores_a and scores_b:
            gap = float(np.mean(scores_a) - np.mean(scores_b))
            row["score_gap"] = gap
            gaps.append(gap)
        rows.append(row)
    if not rows:
        raise DataError("no queries to compare")
    return StrategyComparison(
        rows=tuple(rows),
        mean_jaccard=float(np.mean([r["jaccard"] for r in rows])),
        mean_score_gap=float(np.mean(gaps)) if gaps else None,
    )


def dump_selection(context: ContextSet, sink: IO[bytes]) -> None:
    """One JSON line per query: {"query_id", "strategy", "k", "selected"}."""
    row = {
        "query_id": context.query_id,
        "strategy": context.strategy,
        "k": context.k,
        "selected": [{"id": ex.id, "score": ex.score} for ex in context.examples],
    }
    sink.write(json.dumps(row, ensure_ascii=False, sort_keys=True).encode("utf-8"))
    sink.write(b"\n")
