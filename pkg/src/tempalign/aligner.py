"""Trainable linear alignment head over frozen embeddings.

The head is a square matrix A applied to both sides of a cosine; the identity
head reproduces the base similarity exactly. Training minimizes a pairwise
ranking loss over batches:

    loss = log(1 + sum over ordered (i, j) with label_i > label_j
                   of exp(scale * (pred_j - pred_i)))

so a batch is penalized whenever a higher-labeled pair is predicted less
similar than a lower-labeled one. Equal labels contribute nothing. Gradients
are analytic and checked against central finite differences in the tests.

Checkpoint format (little-endian): magic "CLHD", u32 version = 1, u32 dim,
dim*dim binary64 values, then the CRC-32 of those value bytes.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass
from typing import IO, Optional, Sequence

import numpy as np

from .embedstore import EmbeddingStore, NORM_EPS, clamp_similarity
from .errors import DataError, TrainingDivergedError
from .pairgen import TrainingSet

HEAD_MAGIC = b"CLHD"
HEAD_VERSION = 1
DEFAULT_SCALE = 20.0

OPTIMIZER_SGD = "sgd"
OPTIMIZER_ADAM = "adam"


@dataclass(frozen=True)
class AlignmentHead:
    dim: int
    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape != (self.dim, self.dim):
            raise DataError(f"head matrix shape {matrix.shape} != ({self.dim}, {self.dim})")
        if not np.all(np.isfinite(matrix)):
            raise DataError("head matrix must be finite")
        matrix = matrix.copy()
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, dim: int) -> "AlignmentHead":
        return cls(dim=dim, matrix=np.eye(dim))

    @classmethod
    def initial(cls, dim: int, seed: int, jitter: float = 1e-3) -> "AlignmentHead":
        """Identity plus small Gaussian jitter: training starts at the base space."""
        rng = np.random.default_rng(seed)
        return cls(dim=dim, matrix=np.eye(dim) + rng.normal(0.0, jitter, (dim, dim)))

    @property
    def checksum(self) -> int:
        return zlib.crc32(self.matrix.astype("<f8").tobytes())


def predict_similarity(head: AlignmentHead, e_u: np.ndarray, e_v: np.ndarray) -> float:
    """cosine(A @ e_u, A @ e_v); invariant under positive scaling of A."""
    u = np.asarray(e_u, dtype=np.float64)
    v = np.asarray(e_v, dtype=np.float64)
    if u.shape != (head.dim,) or v.shape != (head.dim,):
        raise DataError(f"vector shapes {u.shape}/{v.shape} do not match head dim {head.dim}")
    a = head.matrix @ u
    b = head.matrix @ v
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_EPS or nb < NORM_EPS:
        raise DataError("mapped vector is degenerate (norm < 1e-12)")
    return clamp_similarity(float(np.dot(a, b)) / (na * nb))


def cosent_loss(
    predicted: Sequence[float], labels: Sequence[float], scale: float = DEFAULT_SCALE
) -> float:
    """Ranking loss over all ordered index pairs with label_i > label_j."""
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale}")
    pred = np.asarray(predicted, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.float64)
    if pred.shape != lab.shape or pred.ndim != 1 or pred.size < 1:
        raise DataError(f"predicted/labels must be equal-length 1-D, got {pred.shape} vs {lab.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(lab))):
        raise DataError("predicted/labels must be finite")
    qualifies = lab[:, None] > lab[None, :]
    if not qualifies.any():
        return 0.0
    margins = scale * (pred[None, :] - pred[:, None])
    total = float(np.exp(margins, where=qualifies, out=np.zeros_like(margins)).sum())
    return float(np.log1p(total))


def _batch_similarities(matrix: np.ndarray, U: np.ndarray, V: np.ndarray):
    # overflow here surfaces as non-finite loss/grad, which train() detects
    with np.errstate(over="ignore", invalid="ignore"):
        AU = U @ matrix.T
        AV = V @ matrix.T
        na = np.linalg.norm(AU, axis=1)
        nb = np.linalg.norm(AV, axis=1)
        if np.any(na < NORM_EPS) or np.any(nb < NORM_EPS):
            raise DataError("mapped vector is degenerate (norm < 1e-12)")
        sims = np.einsum("ij,ij->i", AU, AV) / (na * nb)
    return AU, AV, na, nb, sims


def _loss_and_gradient(
    matrix: np.ndarray,
    U: np.ndarray,
    V: np.ndarray,
    labels: np.ndarray,
    scale: float,
) -> tuple[float, np.ndarray]:
    AU, AV, na, nb, sims = _batch_similarities(matrix, U, V)
    qualifies = labels[:, None] > labels[None, :]
    if not qualifies.any():
        return 0.0, np.zeros_like(matrix)
    with np.errstate(over="ignore", invalid="ignore"):
        margins = scale * (sims[None, :] - sims[:, None])
        expm = np.exp(margins, where=qualifies, out=np.zeros_like(margins))
        z = 1.0 + float(expm.sum())
        # d loss / d sims: +scale/z where the pair appears as the lower-labeled
        # side, -scale/z where it appears as the higher-labeled side.
        coeff = scale * (expm.sum(axis=0) - expm.sum(axis=1)) / z
        inv = 1.0 / (na * nb)
        grad_a = AV * inv[:, None] - AU * (sims / (na * na))[:, None]
        grad_b = AU * inv[:, None] - AV * (sims / (nb * nb))[:, None]
        grad = (coeff[:, None] * grad_a).T @ U + (coeff[:, None] * grad_b).T @ V
        return float(np.log(z)), grad


def cosent_gradient(
    batch: Sequence[tuple[np.ndarray, np.ndarray, float]],
    head: AlignmentHead,
    scale: float = DEFAULT_SCALE,
) -> np.ndarray:
    """Analytic d(loss)/dA for a batch of (e_u, e_v, label) triples."""
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale}")
    if len(batch) < 2:
        raise DataError(f"batch must have >= 2 pairs, got {len(batch)}")
    U = np.asarray([u for u, _, _ in batch], dtype=np.float64)
    V = np.asarray([v for _, v, _ in batch], dtype=np.float64)
    labels = np.asarray([y for _, _, y in batch], dtype=np.float64)
    _, grad = _loss_and_gradient(head.matrix, U, V, labels, scale)
    return grad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    scale: float = DEFAULT_SCALE
    seed: int = 0
    optimizer: str = OPTIMIZER_ADAM
    # Test-only escape hatch for the lr -> 0 no-op limit.
    allow_zero_lr: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or (self.learning_rate == 0 and not self.allow_zero_lr):
            raise DataError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise DataError(f"batch size must be >= 2, got {self.batch_size}")
        if self.scale <= 0:
            raise DataError(f"scale must be positive, got {self.scale}")
        if self.optimizer not in (OPTIMIZER_SGD, OPTIMIZER_ADAM):
            raise DataError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class TrainReport:
    train_losses: tuple[float, ...]
    val_losses: tuple[float, ...]
    wall_time_s: float
    head_checksum: int

    def __post_init__(self) -> None:
        if len(self.train_losses) != len(self.val_losses):
            raise DataError("train/val loss traces must have equal length")


def _resolve(pairs, low_store: EmbeddingStore, rich_store: EmbeddingStore):
    U = np.empty((len(pairs), low_store.dim), dtype=np.float64)
    V = np.empty((len(pairs), rich_store.dim), dtype=np.float64)
    y = np.empty(len(pairs), dtype=np.float64)
    for i, pair in enumerate(pairs):
        U[i] = low_store.vector(pair.low_id)
        V[i] = rich_store.vector(pair.rich_id)
        y[i] = pair.label
    return U, V, y


def _mean_loss(matrix, U, V, y, scale, batch_size) -> float:
    losses = []
    for start in range(0, len(y), batch_size):
        sl = slice(start, start + batch_size)
        if len(y[sl]) < 2:
            continue
        loss, _ = _loss_and_gradient(matrix, U[sl], V[sl], y[sl], scale)
        losses.append(loss)
    return float(np.mean(losses)) if losses else 0.0


def train(
    head0: AlignmentHead,
    train_set: TrainingSet,
    low_store: EmbeddingStore,
    rich_store: EmbeddingStore,
    config: TrainConfig,
    val_set: Optional[TrainingSet] = None,
) -> tuple[AlignmentHead, TrainReport]:
    """Mini-batch training; deterministic for a fixed config and seed.

    Shuffle order is drawn from one seeded generator, batches are consecutive
    slices, and reductions are plain NumPy sums, so two runs with the same
    inputs produce bit-identical heads. Divergence (non-finite loss or
    gradient) raises TrainingDivergedError carrying the last good epoch.
    """
    if len(train_set) == 0:
        raise DataError("training set is empty")
    if low_store.dim != head0.dim or rich_store.dim != head0.dim:
        raise DataError("store dims do not match head dim")
    U, V, y = _resolve(train_set.pairs, low_store, rich_store)
    has_val = val_set is not None and len(val_set) > 0
    if has_val:
        Uv, Vv, yv = _resolve(val_set.pairs, low_store, rich_store)

    matrix = head0.matrix.copy()
    rng = np.random.default_rng(config.seed)
    adam_m = np.zeros_like(matrix)
    adam_v = np.zeros_like(matrix)
    step = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    started = time.perf_counter()
    last_good = matrix.copy()

    for epoch in range(config.epochs):
        perm = rng.permutation(len(y))
        batch_losses = []
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            if len(idx) < 2:
                continue
            loss, grad = _loss_and_gradient(matrix, U[idx], V[idx], y[idx], config.scale)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                report = TrainReport(
                    train_losses=tuple(train_losses),
                    val_losses=tuple(val_losses),
                    wall_time_s=time.perf_counter() - started,
                    head_checksum=zlib.crc32(last_good.astype("<f8").tobytes()),
                )
                raise TrainingDivergedError(
                    last_good_epoch=epoch - 1,
                    head=AlignmentHead(dim=head0.dim, matrix=last_good),
                    report=report,
                )
            step += 1
            if config.optimizer == OPTIMIZER_ADAM:
                adam_m = 0.9 * adam_m + 0.1 * grad
                adam_v = 0.999 * adam_v + 0.001 * grad * grad
                m_hat = adam_m / (1.0 - 0.9**step)
                v_hat = adam_v / (1.0 - 0.999**step)
                matrix = matrix - config.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
            else:
                matrix = matrix - config.learning_rate * grad
            batch_losses.append(loss)
        train_losses.append(float(np.mean(batch_losses)) if batch_losses else 0.0)
        if has_val:
            val_losses.append(_mean_loss(matrix, Uv, Vv, yv, config.scale, config.batch_size))
        else:
            val_losses.append(float("nan"))
        last_good = matrix.copy()

    head = AlignmentHead(dim=head0.dim, matrix=matrix)
    report = TrainReport(
        train_losses=tuple(train_losses),
        val_losses=tuple(val_losses),
        wall_time_s=time.perf_counter() - started,
        head_checksum=head.checksum,
    )
    return head, report


def save_head(head: AlignmentHead, sink: IO[bytes]) -> None:
    payload = head.matrix.astype("<f8").tobytes()
    sink.write(HEAD_MAGIC)
    sink.write(struct.pack("<II", HEAD_VERSION, head.dim))
    sink.write(payload)
    sink.write(struct.pack("<I", zlib.crc32(payload)))


def save_head_file(head: AlignmentHead, path) -> None:
    with open(path, "wb") as fh:
        save_head(head, fh)


def load_head(source: IO[bytes]) -> AlignmentHead:
    magic = source.read(4)
    if magic != HEAD_MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {HEAD_MAGIC!r}")
    header = source.read(8)
    if len(header) != 8:
        raise DataError("truncated head checkpoint: incomplete header")
    version, dim = struct.unpack("<II", header)
    if version != HEAD_VERSION:
        raise DataError(f"unsupported head version {version}, expected {HEAD_VERSION}")
    if dim < 1:
        raise DataError(f"invalid dim {dim} in head checkpoint")
    payload = source.read(8 * dim * dim)
    if len(payload) != 8 * dim * dim:
        raise DataError(
            f"truncated head checkpoint: expected {8 * dim * dim} matrix bytes, got {len(payload)}"
        )
    raw_crc = source.read(4)
    if len(raw_crc) != 4:
        raise DataError("truncated head checkpoint: missing checksum")
    (expected_crc,) = struct.unpack("<I", raw_crc)
    actual_crc = zlib.crc32(payload)
    if actual_crc != expected_crc:
        raise DataError(
            f"head checksum mismatch: stored {expected_crc:#010x}, computed {actual_crc:#010x}"
        )
    if source.read(1):
        raise DataError("unexpected trailing bytes in head checkpoint")
    matrix = np.frombuffer(payload, dtype="<f8").reshape(dim, dim)
    return AlignmentHead(dim=dim, matrix=matrix)


def load_head_file(path) -> AlignmentHead:
    with open(path, "rb") as fh:
        return load_head(fh)
