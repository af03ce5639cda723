"""Scoring and statistics: token F1 / exact match, BLEU-3, translation
success rate, KL divergence over similarity histograms, the h/(h+w)
prioritization factor, a one-tailed Mann-Whitney U test, and the pre/post
training embedding-shift histograms.

All functions are pure; report writers emit JSONL / JSON / CSV only.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, IO, Iterable, Optional, Sequence

import numpy as np

from .aligner import AlignmentHead
from .embedstore import EmbeddingStore
from .errors import DataError
from .pairgen import query_rng
from .promptkit import normalize_answer

KL_EPS = 1e-9
EXACT_U_LIMIT = 400
ANTAGONIST_THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# Word-level F1 / exact match


@dataclass(frozen=True)
class ExampleScore:
    query_id: str
    f1: float
    em: int
    best_gold: int


def _token_f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_em(
    prediction: str,
    golds: Sequence[str],
    level: str,
    language: str = "en",
    query_id: str = "",
) -> ExampleScore:
    """Max-over-golds token F1 and exact match on normalized strings."""
    if not golds:
        raise DataError("golds must be non-empty")
    pred_norm = normalize_answer(prediction, level, language)
    pred_tokens = pred_norm.split()
    best_f1, best_idx, em = 0.0, 0, 0
    for idx, gold in enumerate(golds):
        gold_norm = normalize_answer(gold, level, language)
        score = _token_f1(pred_tokens, gold_norm.split())
        if score > best_f1:
            best_f1, best_idx = score, idx
        if pred_norm == gold_norm:
            em = 1
    if em:
        best_f1 = 1.0
    return ExampleScore(query_id=query_id, f1=best_f1, em=em, best_gold=best_idx)


# ---------------------------------------------------------------------------
# BLEU-3


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu3(candidate: str, reference: str) -> float:
    """Sentence BLEU with n = 1..3, uniform weights, no smoothing.

    Brevity penalty is exp(min(0, 1 - |ref| / |cand|)); any zero n-gram
    precision zeroes the score. Empty candidates score 0.
    """
    cand = candidate.split()
    ref = reference.split()
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in (1, 2, 3):
        counts = _ngram_counts(cand, n)
        total = sum(counts.values())
        if total == 0:
            return 0.0
        ref_counts = _ngram_counts(ref, n)
        clipped = sum(min(c, ref_counts[g]) for g, c in counts.items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total) / 3.0
    brevity = math.exp(min(0.0, 1.0 - len(ref) / len(cand)))
    return brevity * math.exp(log_sum)


def corpus_bleu3(
    candidates: Sequence[str], references: Sequence[str], corpus_level: bool = False
) -> float:
    """Mean of per-sentence BLEU-3 by default; corpus mode pools the counts."""
    if len(candidates) != len(references):
        raise DataError("candidates and references must have equal length")
    if not candidates:
        raise DataError("nothing to score")
    if not corpus_level:
        return float(np.mean([bleu3(c, r) for c, r in zip(candidates, references)]))
    cand_len = ref_len = 0
    clipped = [0, 0, 0]
    totals = [0, 0, 0]
    for candidate, reference in zip(candidates, references):
        cand = candidate.split()
        ref = reference.split()
        cand_len += len(cand)
        ref_len += len(ref)
        for n in (1, 2, 3):
            counts = _ngram_counts(cand, n)
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(counts.values())
            clipped[n - 1] += sum(min(c, ref_counts[g]) for g, c in counts.items())
    if cand_len == 0 or any(c == 0 for c in clipped) or any(t == 0 for t in totals):
        return 0.0
    log_sum = sum(math.log(c / t) for c, t in zip(clipped, totals)) / 3.0
    brevity = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return brevity * math.exp(log_sum)


# ---------------------------------------------------------------------------
# Translation success rate


def translation_success_rate(
    texts: Sequence[str],
    predict_language: Callable[[str], str],
    expected_language: str,
) -> float:
    """Percentage of texts whose predicted language tag matches the target."""
    if not texts:
        return 0.0
    hits = sum(1 for t in texts if predict_language(t) == expected_language)
    return 100.0 * hits / len(texts)


# ---------------------------------------------------------------------------
# Histograms and KL divergence


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.edges) != len(self.counts) + 1:
            raise DataError("histogram needs len(edges) == len(counts) + 1")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise DataError("histogram edges must be strictly increasing")
        if any(c < 0 for c in self.counts):
            raise DataError("histogram counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(self.counts)

    @classmethod
    def from_values(
        cls, values: Iterable[float], bins: int = 50, lo: float = -1.0, hi: float = 1.0
    ) -> "Histogram":
        counts, edges = np.histogram(np.asarray(list(values), dtype=np.float64),
                                     bins=bins, range=(lo, hi))
        return cls(edges=tuple(float(e) for e in edges),
                   counts=tuple(int(c) for c in counts))

    def mean(self) -> float:
        """Mean of bin midpoints weighted by counts."""
        if self.total == 0:
            raise DataError("histogram is empty")
        mids = [(a + b) / 2 for a, b in zip(self.edges, self.edges[1:])]
        return float(np.average(mids, weights=self.counts))


def kl_divergence(p: Histogram, q: Histogram) -> float:
    """Sum of p_i * ln(p_i / q_i) in nats, with q floored at 1e-9."""
    if p.edges != q.edges:
        raise DataError("histograms must share bin edges")
    if p.total <= 0 or q.total <= 0:
        raise DataError("histogram totals must be positive")
    p_mass = np.asarray(p.counts, dtype=np.float64) / p.total
    q_mass = np.asarray(q.counts, dtype=np.float64) / q.total
    q_mass = np.maximum(q_mass, KL_EPS)
    mask = p_mass > 0
    return float(np.sum(p_mass[mask] * np.log(p_mass[mask] / q_mass[mask])))


def write_histogram_csv(hist: Histogram, sink: IO[str]) -> None:
    """CSV rows (bin_lo, bin_hi, count), consumable by any plotting tool."""
    sink.write("bin_lo,bin_hi,count\n")
    for lo, hi, count in zip(hist.edges, hist.edges[1:], hist.counts):
        sink.write(f"{lo!r},{hi!r},{count}\n")


# ---------------------------------------------------------------------------
# Prioritization factor


def prioritization_factor(h: int, w: int) -> float:
    """Share of top-similarity pairs in the training set: h / (h + w)."""
    if h + w <= 0:
        raise DataError("h + w must be positive")
    return h / (h + w)


# ---------------------------------------------------------------------------
# One-tailed Mann-Whitney U


@dataclass(frozen=True)
class UTestResult:
    statistic: float
    p_value: float
    method: str
    degenerate: bool = False


def _rankdata_mid(values: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Midrank assignment; also returns the tie-group sizes."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    ties = []
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        if j > i:
            ties.append(j - i + 1)
        i = j + 1
    return ranks, ties


def _u_count(n1: int, n2: int, u: int, memo: dict) -> int:
    """Number of rank arrangements of n1 vs n2 observations with U statistic u."""
    if u < 0 or u > n1 * n2:
        return 0
    if n1 == 0 or n2 == 0:
        return 1 if u == 0 else 0
    key = (n1, n2, u)
    if key not in memo:
        memo[key] = _u_count(n1 - 1, n2, u - n2, memo) + _u_count(n1, n2 - 1, u, memo)
    return memo[key]


def mann_whitney_one_tailed(
    sample_a: Sequence[float], sample_b: Sequence[float]
) -> UTestResult:
    """Tests the alternative that sample_a tends to exceed sample_b.

    U comes from rank sums with midrank ties. The p-value is computed from
    the exact U distribution when n1 * n2 <= 400 and the pooled sample is
    tie-free, otherwise from the normal approximation with tie and
    continuity corrections.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DataError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks, ties = _rankdata_mid(pooled)
    u_a = float(ranks[:n1].sum()) - n1 * (n1 + 1) / 2.0

    if np.all(pooled == pooled[0]):
        return UTestResult(statistic=u_a, p_value=1.0,
                           method="normal-approximation", degenerate=True)

    if n1 * n2 <= EXACT_U_LIMIT and not ties:
        memo: dict = {}
        u_obs = int(round(u_a))
        favorable = sum(_u_count(n1, n2, u, memo) for u in range(u_obs, n1 * n2 + 1))
        p = favorable / math.comb(n1 + n2, n1)
        return UTestResult(statistic=u_a, p_value=p, method="exact")

    n = n1 + n2
    mean = n1 * n2 / 2.0
    tie_term = sum(t**3 - t for t in ties) / (n * (n - 1))
    variance = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if variance <= 0:
        return UTestResult(statistic=u_a, p_value=1.0,
                           method="normal-approximation", degenerate=True)
    z = (u_a - mean - 0.5) / math.sqrt(variance)
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return UTestResult(statistic=u_a, p_value=min(1.0, max(p, 1e-300)),
                       method="normal-approximation")


# ---------------------------------------------------------------------------
# Embedding-shift histograms


@dataclass(frozen=True)
class ShiftHistograms:
    positive_before: Histogram
    positive_after: Histogram
    antagonist_before: Histogram
    antagonist_after: Histogram
    antagonist_pairs: tuple[tuple[str, str], ...]


def embedding_shift_histograms(
    low_store: EmbeddingStore,
    rich_store: EmbeddingStore,
    positive_pairs: Sequence[tuple[str, str]],
    head_after: AlignmentHead,
    head_before: Optional[AlignmentHead] = None,
    seed: int = 0,
    bins: int = 50,
) -> ShiftHistograms:
    """Predicted-similarity histograms before/after training.

    Positive pairs are the given translation pairs. Antagonist pairs are an
    equal-count seeded sample of (low, rich) pairs whose before-head
    similarity does not exceed 0.5, drawn from the full cross product minus
    the positive pairs.
    """
    if not positive_pairs:
        raise DataError("need at least one positive pair")
    if head_before is None:
        head_before = AlignmentHead.identity(low_store.dim)

    def mapped_unit(store: EmbeddingStore, head: AlignmentHead) -> np.ndarray:
        mat = store.matrix.astype(np.float64) @ head.matrix.T
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise DataError("mapped vector is degenerate (norm < 1e-12)")
        return mat / norms

    def sims(pairs, head):
        lo_unit = mapped_unit(low_store, head)
        hi_unit = mapped_unit(rich_store, head)
        lo_pos = {id_: i for i, id_ in enumerate(low_store.ids)}
        hi_pos = {id_: i for i, id_ in enumerate(rich_store.ids)}
        return [float(lo_unit[lo_pos[lo]] @ hi_unit[hi_pos[hi]]) for lo, hi in pairs]

    # Full cross product of before-head similarities; desk-scale pools only.
    before_matrix = mapped_unit(low_store, head_before) @ mapped_unit(rich_store, head_before).T
    positive_set = set(positive_pairs)
    candidates: list[tuple[str, str]] = []
    for i, lo in enumerate(low_store.ids):
        for j, hi in enumerate(rich_store.ids):
            if (lo, hi) not in positive_set and before_matrix[i, j] <= ANTAGONIST_THRESHOLD:
                candidates.append((lo, hi))
    if not candidates:
        raise DataError(
            f"no pair has before-similarity <= {ANTAGONIST_THRESHOLD}; cannot sample antagonists"
        )
    rng = query_rng(seed, "antagonist-pairs")
    take = min(len(positive_pairs), len(candidates))
    chosen = rng.choice(len(candidates), size=take, replace=False)
    antagonists = tuple(candidates[int(i)] for i in chosen)

    mk = lambda values: Histogram.from_values(values, bins=bins)
    return ShiftHistograms(
        positive_before=mk(sims(positive_pairs, head_before)),
        positive_after=mk(sims(positive_pairs, head_after)),
        antagonist_before=mk(sims(antagonists, head_before)),
        antagonist_after=mk(sims(antagonists, head_after)),
        antagonist_pairs=antagonists,
    )


# ---------------------------------------------------------------------------
# Report aggregation


def aggregate_scores(scores: Sequence[ExampleScore]) -> dict:
    """Arithmetic means over per-example scores."""
    if not scores:
        raise DataError("no scores to aggregate")
    return {
        "n": len(scores),
        "mean_f1": float(np.mean([s.f1 for s in scores])),
        "mean_em": float(np.mean([s.em for s in scores])),
    }


def write_per_example(
    scores: Sequence[ExampleScore],
    predictions: Sequence[str],
    golds: Sequence[Sequence[str]],
    sink: IO[bytes],
) -> None:
    """JSONL rows {"query_id", "f1", "em", "pred", "gold"}."""
    for score, pred, gold in zip(scores, predictions, golds):
        row = {
            "query_id": score.query_id,
            "f1": score.f1,
            "em": score.em,
            "pred": pred,
            "gold": list(gold),
        }
        sink.write(json.dumps(row, ensure_ascii=False, sort_keys=True).encode("utf-8"))
        sink.write(b"\n")
