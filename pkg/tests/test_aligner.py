import io
import math

import numpy as np
import pytest

from tempalign.aligner import (
    AlignmentHead,
    TrainConfig,
    cosent_gradient,
    cosent_loss,
    load_head,
    predict_similarity,
    save_head,
    train,
)
from tempalign.embedstore import EmbeddingStore, cosine
from tempalign.errors import DataError, TrainingDivergedError
from tempalign.pairgen import PROVENANCE_TOP, ScoredPair, TrainingSet


def loss_of_head(matrix, batch, scale):
    """Loss evaluated through the public path, for finite differences."""
    head = AlignmentHead(dim=matrix.shape[0], matrix=matrix)
    preds = [predict_similarity(head, u, v) for u, v, _ in batch]
    return cosent_loss(preds, [y for _, _, y in batch], scale)


def fd_gradient(batch, head, scale, eps=1e-5):
    """Central finite differences over every entry of the head matrix."""
    base = head.matrix.copy()
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(base.shape[1]):
            plus = base.copy()
            plus[i, j] += eps
            minus = base.copy()
            minus[i, j] -= eps
            grad[i, j] = (
                loss_of_head(plus, batch, scale) - loss_of_head(minus, batch, scale)
            ) / (2 * eps)
    return grad


def max_rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def random_batch(rng, size, dim):
    return [
        (rng.normal(size=dim), rng.normal(size=dim), float(rng.uniform(-1, 1)))
        for _ in range(size)
    ]


# --- predict_similarity ------------------------------------------------------


def test_identity_head_reproduces_cosine():
    rng = np.random.default_rng(0)
    head = AlignmentHead.identity(5)
    for _ in range(20):
        u, v = rng.normal(size=5), rng.normal(size=5)
        assert predict_similarity(head, u, v) == pytest.approx(cosine(u, v), abs=1e-12)


def test_scaled_identity_is_cosine():
    head = AlignmentHead(3, 2.0 * np.eye(3))
    u, v = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5, 0.25])
    assert predict_similarity(head, u, v) == pytest.approx(cosine(u, v), abs=1e-12)


def test_rotation_head_preserves_orthogonality():
    rot = AlignmentHead(2, np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert predict_similarity(rot, np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)


def test_positive_scaling_invariance():
    rng = np.random.default_rng(1)
    matrix = rng.normal(size=(4, 4))
    u, v = rng.normal(size=4), rng.normal(size=4)
    a = predict_similarity(AlignmentHead(4, matrix), u, v)
    b = predict_similarity(AlignmentHead(4, 3.7 * matrix), u, v)
    assert a == pytest.approx(b, abs=1e-9)


def test_predict_errors():
    head = AlignmentHead.identity(3)
    with pytest.raises(DataError):
        predict_similarity(head, np.ones(2), np.ones(3))
    singular = AlignmentHead(2, np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(DataError, match="degenerate"):
        predict_similarity(singular, np.array([0.0, 1.0]), np.array([1.0, 0.0]))


# --- cosent_loss -------------------------------------------------------------


def test_loss_zero_when_labels_equal():
    assert cosent_loss([0.2, 0.8, -0.1], [0.5, 0.5, 0.5], 20.0) == 0.0


def test_loss_well_ordered_pair():
    expected = math.log1p(math.exp(-16.0))
    assert cosent_loss([0.9, 0.1], [0.9, 0.1], 20.0) == pytest.approx(expected, rel=1e-9)
    assert cosent_loss([0.9, 0.1], [0.9, 0.1], 20.0) == pytest.approx(1.13e-7, rel=1e-2)


def test_loss_inverted_pair():
    expected = math.log(1.0 + math.exp(16.0))
    assert cosent_loss([0.1, 0.9], [0.9, 0.1], 20.0) == pytest.approx(expected, rel=1e-12)
    assert cosent_loss([0.1, 0.9], [0.9, 0.1], 20.0) == pytest.approx(16.0000001, abs=1e-6)


def test_loss_nonnegative_and_small_when_margins_large():
    rng = np.random.default_rng(2)
    for _ in range(30):
        preds = rng.uniform(-1, 1, size=5)
        labels = rng.uniform(-1, 1, size=5)
        assert cosent_loss(preds, labels, 20.0) >= 0.0
    # every qualifying pair separated by at least 1
    labels = [0.9, 0.1]
    preds = [1.0, 0.0]
    assert cosent_loss(preds, labels, 20.0) < 1e-6


def test_loss_permutation_invariance():
    rng = np.random.default_rng(3)
    preds = rng.uniform(-1, 1, size=6)
    labels = rng.uniform(-1, 1, size=6)
    base = cosent_loss(preds, labels, 20.0)
    for _ in range(5):
        perm = rng.permutation(6)
        assert cosent_loss(preds[perm], labels[perm], 20.0) == pytest.approx(base, rel=1e-12)


def test_loss_shift_invariance():
    rng = np.random.default_rng(4)
    preds = rng.uniform(-1, 1, size=5)
    labels = rng.uniform(-1, 1, size=5)
    base = cosent_loss(preds, labels, 7.0)
    shifted = cosent_loss(preds + 0.37, labels, 7.0)
    assert shifted == pytest.approx(base, rel=1e-9)


def test_loss_errors():
    with pytest.raises(DataError):
        cosent_loss([0.1], [0.2], 0.0)
    with pytest.raises(DataError):
        cosent_loss([float("nan")], [0.2], 1.0)
    with pytest.raises(DataError):
        cosent_loss([0.1, 0.2], [0.2], 1.0)


# --- cosent_gradient ---------------------------------------------------------


def test_gradient_zero_for_equal_labels():
    rng = np.random.default_rng(5)
    batch = [(rng.normal(size=3), rng.normal(size=3), 0.4) for _ in range(4)]
    grad = cosent_gradient(batch, AlignmentHead.identity(3), 20.0)
    assert np.all(grad == 0.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    head = AlignmentHead.initial(4, seed=1, jitter=0.05)
    batch = random_batch(rng, 3, 4)
    analytic = cosent_gradient(batch, head, 20.0)
    numeric = fd_gradient(batch, head, 20.0)
    assert max_rel_error(analytic, numeric) <= 1e-4


def test_gradient_duplicated_batch():
    rng = np.random.default_rng(7)
    head = AlignmentHead.initial(3, seed=2, jitter=0.05)
    batch = random_batch(rng, 2, 3)
    doubled = batch + batch
    analytic = cosent_gradient(doubled, head, 5.0)
    numeric = fd_gradient(doubled, head, 5.0)
    assert max_rel_error(analytic, numeric) <= 1e-4


def test_gradient_batch_too_small():
    with pytest.raises(DataError, match="batch"):
        cosent_gradient([(np.ones(2), np.ones(2), 0.1)], AlignmentHead.identity(2))


# --- training ----------------------------------------------------------------


def small_training_fixture(rng, n=40, dim=4):
    low_items, rich_items, pairs = [], [], []
    flip = np.diag([1.0] * (dim // 2) + [-1.0] * (dim - dim // 2))
    base = rng.normal(size=(n, dim))
    for i in range(n):
        low_items.append((f"lo{i}", flip @ base[i] + rng.normal(0, 0.01, dim)))
        rich_items.append((f"ri{i}", base[i]))
    low_store = EmbeddingStore.from_items(low_items)
    rich_store = EmbeddingStore.from_items(rich_items)
    for i in range(n):
        for j in rng.choice(n, size=4, replace=False):
            label = cosine(low_store.vector(f"lo{i}"),
                           flip @ np.asarray(rich_store.vector(f"ri{int(j)}"), dtype=float))
            pairs.append(ScoredPair(low_id=f"lo{i}", rich_id=f"ri{int(j)}",
                                    label=label, provenance=PROVENANCE_TOP))
    return low_store, rich_store, TrainingSet(pairs=tuple(pairs), h=4, w=0, seed=0)


def test_train_noop_limit_keeps_head():
    rng = np.random.default_rng(8)
    low_store, rich_store, ts = small_training_fixture(rng, n=10)
    config = TrainConfig(learning_rate=0.0, epochs=1, batch_size=4, seed=0,
                         optimizer="sgd", allow_zero_lr=True)
    head0 = AlignmentHead.initial(4, seed=3)
    head, report = train(head0, ts, low_store, rich_store, config)
    assert np.array_equal(head.matrix, head0.matrix)
    assert len(report.train_losses) == 1


def test_train_zero_lr_rejected_without_escape_hatch():
    with pytest.raises(DataError, match="learning rate"):
        TrainConfig(learning_rate=0.0)


def test_train_reduces_validation_loss():
    rng = np.random.default_rng(9)
    low_store, rich_store, ts = small_training_fixture(rng, n=30)
    val = TrainingSet(pairs=ts.pairs[:40], h=4, w=0, seed=0)
    tr = TrainingSet(pairs=ts.pairs[40:], h=4, w=0, seed=0)
    config = TrainConfig(learning_rate=5e-3, epochs=8, batch_size=16, seed=1)
    head0 = AlignmentHead.initial(4, seed=4)
    _, report = train(head0, tr, low_store, rich_store, config, val)
    assert report.val_losses[-1] < report.val_losses[0]
    assert len(report.train_losses) == len(report.val_losses) == 8


def test_train_bit_identical_for_same_seed():
    rng = np.random.default_rng(10)
    low_store, rich_store, ts = small_training_fixture(rng, n=15)
    config = TrainConfig(learning_rate=1e-3, epochs=3, batch_size=8, seed=7)
    head0 = AlignmentHead.initial(4, seed=5)
    head_a, report_a = train(head0, ts, low_store, rich_store, config)
    head_b, report_b = train(head0, ts, low_store, rich_store, config)
    assert np.array_equal(head_a.matrix, head_b.matrix)
    assert report_a.head_checksum == report_b.head_checksum
    assert report_a.train_losses == report_b.train_losses


def test_train_divergence_reports_last_good_epoch():
    rng = np.random.default_rng(11)
    low_store, rich_store, ts = small_training_fixture(rng, n=10)
    # large enough that squared norms overflow float64 on the next batch
    config = TrainConfig(learning_rate=1e200, epochs=4, batch_size=8, seed=2,
                         optimizer="sgd")
    with pytest.raises(TrainingDivergedError) as err:
        train(AlignmentHead.initial(4, seed=6), ts, low_store, rich_store, config)
    assert err.value.last_good_epoch >= -1
    assert err.value.head.dim == 4


def test_train_config_validation():
    with pytest.raises(DataError):
        TrainConfig(epochs=0)
    with pytest.raises(DataError):
        TrainConfig(batch_size=1)
    with pytest.raises(DataError):
        TrainConfig(scale=0.0)
    with pytest.raises(DataError):
        TrainConfig(optimizer="lion")


# --- checkpoint format -------------------------------------------------------


def head_bytes(head):
    buf = io.BytesIO()
    save_head(head, buf)
    return buf.getvalue()


def test_head_round_trip_bit_exact():
    rng = np.random.default_rng(12)
    head = AlignmentHead(5, rng.normal(size=(5, 5)))
    loaded = load_head(io.BytesIO(head_bytes(head)))
    assert loaded.dim == 5
    assert np.array_equal(loaded.matrix, head.matrix)


def test_head_corruption_errors():
    rng = np.random.default_rng(13)
    data = head_bytes(AlignmentHead(3, rng.normal(size=(3, 3))))
    with pytest.raises(DataError, match="magic"):
        load_head(io.BytesIO(b"NOPE" + data[4:]))
    with pytest.raises(DataError, match="version"):
        load_head(io.BytesIO(data[:4] + b"\x09\x00\x00\x00" + data[8:]))
    with pytest.raises(DataError, match="truncated"):
        load_head(io.BytesIO(data[:-6]))
    flipped = bytearray(data)
    flipped[20] ^= 0xFF
    with pytest.raises(DataError, match="checksum"):
        load_head(io.BytesIO(bytes(flipped)))
    with pytest.raises(DataError, match="trailing"):
        load_head(io.BytesIO(data + b"!"))
