import io

import numpy as np
import pytest

from tempalign.embedstore import (
    EmbeddingStore,
    clamp_similarity,
    cosine,
    cosine_distance,
    load_store,
    save_store,
    top_k,
)
from tempalign.errors import DataError


def brute_force_ranking(query, store, exclude=()):
    """Oracle: full sort of every candidate by (-cosine, id)."""
    rows = [
        (id_, cosine(query, store.vector(id_)))
        for id_ in store.ids
        if id_ not in exclude
    ]
    return sorted(rows, key=lambda row: (-row[1], row[0]))


def random_store(rng, n, dim, prefix="v"):
    return EmbeddingStore.from_items(
        [(f"{prefix}{i:04d}", rng.normal(size=dim)) for i in range(n)]
    )


# --- cosine ------------------------------------------------------------------


def test_cosine_self():
    assert cosine([0.6, 0.8], [0.6, 0.8]) == pytest.approx(1.0)


def test_cosine_orthogonal():
    assert cosine([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)


def test_cosine_45_degrees():
    assert cosine([1.0, 0.0], [1.0, 1.0]) == pytest.approx(0.70711, abs=1e-5)


def test_cosine_errors():
    with pytest.raises(DataError, match="dimension"):
        cosine([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(DataError, match="zero"):
        cosine([0.0, 0.0], [1.0, 0.0])


def test_cosine_symmetry_and_scale_invariance():
    rng = np.random.default_rng(0)
    for _ in range(50):
        u, v = rng.normal(size=6), rng.normal(size=6)
        alpha = float(rng.uniform(0.1, 10.0))
        assert cosine(u, v) == pytest.approx(cosine(v, u), abs=1e-12)
        assert cosine(alpha * u, v) == pytest.approx(cosine(u, v), abs=1e-9)


def test_similarity_plus_distance_is_one_exactly():
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=8), rng.normal(size=8)
    assert cosine(u, v) + cosine_distance(u, v) == 1.0


def test_clamp_similarity():
    assert clamp_similarity(1.0 + 5e-7) == 1.0
    assert clamp_similarity(-1.0 - 5e-7) == -1.0
    with pytest.raises(DataError):
        clamp_similarity(1.5)
    with pytest.raises(DataError):
        clamp_similarity(float("nan"))


# --- store construction ------------------------------------------------------


def test_store_rejects_duplicates_and_nan():
    with pytest.raises(DataError, match="duplicate"):
        EmbeddingStore.from_items([("a", [1.0]), ("a", [2.0])])
    with pytest.raises(DataError, match="finite"):
        EmbeddingStore.from_items([("a", [float("nan")])])
    with pytest.raises(DataError):
        EmbeddingStore(2, ["a"], np.zeros((1, 3), dtype=np.float32))


# --- top_k -------------------------------------------------------------------


def test_top_k_exhaustive_case():
    rng = np.random.default_rng(2)
    store = random_store(rng, 7, 4)
    query = rng.normal(size=4)
    got = top_k(query, store, k=len(store))
    assert [id_ for id_, _ in got] == [id_ for id_, _ in brute_force_ranking(query, store)]
    scores = [s for _, s in got]
    assert all(a >= b for a, b in zip(scores, scores[1:]))


def test_top_k_five_vector_fixture_matches_oracle():
    rng = np.random.default_rng(3)
    store = random_store(rng, 5, 3)
    query = rng.normal(size=3)
    assert top_k(query, store, k=2) == brute_force_ranking(query, store)[:2]


def test_top_k_tie_breaks_by_ascending_id():
    store = EmbeddingStore.from_items(
        [("b", [1.0, 0.0]), ("a", [2.0, 0.0]), ("c", [0.0, 1.0])]
    )
    got = top_k([1.0, 0.0], store, k=2)
    assert [id_ for id_, _ in got] == ["a", "b"]


def test_top_k_k1_is_argmax():
    rng = np.random.default_rng(4)
    store = random_store(rng, 20, 5)
    query = rng.normal(size=5)
    assert top_k(query, store, k=1) == brute_force_ranking(query, store)[:1]


def test_top_k_randomized_against_oracle():
    rng = np.random.default_rng(5)
    for _ in range(40):
        n = int(rng.integers(2, 30))
        store = random_store(rng, n, 4)
        query = rng.normal(size=4)
        k = int(rng.integers(1, n + 2))
        assert top_k(query, store, k=k) == brute_force_ranking(query, store)[:k]


def test_top_k_exclusion_and_errors():
    rng = np.random.default_rng(6)
    store = random_store(rng, 3, 2)
    query = rng.normal(size=2)
    got = top_k(query, store, k=5, exclude_ids={"v0000"})
    assert len(got) == 2 and all(id_ != "v0000" for id_, _ in got)
    with pytest.raises(DataError, match="no candidates"):
        top_k(query, store, k=1, exclude_ids=set(store.ids))
    with pytest.raises(DataError, match="k must be"):
        top_k(query, store, k=0)


# --- save / load -------------------------------------------------------------


def save_bytes(store):
    buf = io.BytesIO()
    save_store(store, buf)
    return buf.getvalue()


def test_round_trip_equal_store():
    rng = np.random.default_rng(7)
    store = random_store(rng, 9, 6)
    loaded = load_store(io.BytesIO(save_bytes(store)))
    assert loaded.ids == store.ids
    assert loaded.dim == store.dim
    assert np.array_equal(loaded.matrix, store.matrix)


def test_empty_store_is_header_only():
    empty = EmbeddingStore(3, [], np.empty((0, 3), dtype=np.float32))
    data = save_bytes(empty)
    assert len(data) == 20
    loaded = load_store(io.BytesIO(data))
    assert len(loaded) == 0 and loaded.dim == 3


def test_truncated_file_reports_offset():
    rng = np.random.default_rng(8)
    data = save_bytes(random_store(rng, 2, 4))
    with pytest.raises(DataError, match=r"truncated.*offset"):
        load_store(io.BytesIO(data[:-5]))


def test_bad_magic_and_version():
    rng = np.random.default_rng(9)
    data = save_bytes(random_store(rng, 1, 2))
    with pytest.raises(DataError, match="magic"):
        load_store(io.BytesIO(b"XXXX" + data[4:]))
    bumped = data[:4] + b"\x02\x00\x00\x00" + data[8:]
    with pytest.raises(DataError, match="version"):
        load_store(io.BytesIO(bumped))


def test_duplicate_id_in_file():
    store = EmbeddingStore.from_items([("a", [1.0, 2.0])])
    data = save_bytes(store)
    record = data[20:]
    doubled = data + record
    # fix the count field (u64 little-endian at offset 12)
    doubled = doubled[:12] + (2).to_bytes(8, "little") + doubled[20:]
    with pytest.raises(DataError, match="duplicate"):
        load_store(io.BytesIO(doubled))


def test_trailing_bytes_rejected():
    rng = np.random.default_rng(10)
    data = save_bytes(random_store(rng, 1, 2))
    with pytest.raises(DataError, match="trailing"):
        load_store(io.BytesIO(data + b"\x00"))
