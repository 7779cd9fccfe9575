import functools
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm

from project.container import pack_arrays, read_container, unpack_arrays, write_container
from project.corpus import PassageCollection
from project.datagen import TrainingPair
from project.errors import (
    ConfigError,
    ContainerError,
    DimensionMismatchError,
    UnknownPassageError,
)
from project.manifest import RunManifest
from project.text import Token

logger = logging.getLogger(__name__)

DenseVector = np.ndarray

DEFAULT_DIM = 64
DEFAULT_BUCKETS = 2**18
DEFAULT_INIT_SCALE = 0.05


class TrainConfig(BaseModel):
    batch_size: int = Field(default=64, ge=1)
    learning_rate: float = Field(default=0.05, gt=0)
    epochs: int = Field(default=1, ge=0)
    seed: int = 0


@functools.lru_cache(maxsize=1 << 20)
def _token_hash(token: Token) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def bucket_of(token: Token, buckets: int) -> int:
    return _token_hash(token) % buckets


@dataclass
class EncoderModel:
    """
    Siamese bag-of-terms encoder: hashed term embeddings, mean pooling and a square projection.

    Queries and passages go through the very same embeddings and projection,
    so encoding identical tokens on either side gives identical vectors.
    """

    embeddings: np.ndarray
    projection: np.ndarray
    init_scale: float = DEFAULT_INIT_SCALE
    config: Optional[TrainConfig] = None
    epoch_losses: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.embeddings.ndim != 2:
            raise DimensionMismatchError("embedding table must be 2-dimensional")
        n = self.embeddings.shape[1]
        if self.projection.shape != (n, n):
            raise DimensionMismatchError(
                f"projection must be {n}x{n}, got {self.projection.shape}"
            )

    @classmethod
    def initialize(
        cls,
        dim: int = DEFAULT_DIM,
        buckets: int = DEFAULT_BUCKETS,
        seed: int = 0,
        init_scale: float = DEFAULT_INIT_SCALE,
    ) -> "EncoderModel":
        if dim < 1 or buckets < 1:
            raise ConfigError(f"dim and buckets must be positive, got {dim}, {buckets}")
        if init_scale <= 0:
            raise ConfigError(f"init_scale must be positive, got {init_scale}")
        rng = np.random.default_rng(seed)
        embeddings = rng.uniform(-init_scale, init_scale, size=(buckets, dim))
        projection = rng.uniform(-init_scale, init_scale, size=(dim, dim))
        return cls(embeddings=embeddings, projection=projection, init_scale=init_scale)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def buckets(self) -> int:
        return self.embeddings.shape[0]

    def copy(self) -> "EncoderModel":
        return EncoderModel(
            embeddings=self.embeddings.copy(),
            projection=self.projection.copy(),
            init_scale=self.init_scale,
            config=self.config,
            epoch_losses=list(self.epoch_losses),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.dim}:{self.buckets}:".encode("ascii"))
        h.update(pack_arrays(self.embeddings, self.projection))
        return h.hexdigest()


@dataclass
class TrainingBatch:
    """
    B aligned (question tokens, positive passage tokens) pairs.

    Every other passage in the batch is a negative for each question.
    """

    questions: list[list[Token]]
    passages: list[list[Token]]

    def __post_init__(self) -> None:
        if len(self.questions) != len(self.passages):
            raise ConfigError("batch needs as many passages as questions")

    def __len__(self) -> int:
        return len(self.questions)


@dataclass
class Gradients:
    rows: np.ndarray
    embeddings: np.ndarray
    projection: np.ndarray


def encode(model: EncoderModel, tokens: Sequence[Token]) -> DenseVector:
    """
    Mean-pools the hashed embeddings of the tokens and projects the result.

    An empty token list pools to the zero vector.
    """
    if not tokens:
        return np.zeros(model.dim)
    rows = [bucket_of(t, model.buckets) for t in tokens]
    pooled = model.embeddings[rows].mean(axis=0)
    return model.projection @ pooled


def sim(q: DenseVector, p: DenseVector) -> float:
    """
    Dot-product relevance of a query vector and a passage vector.

    Raises:
        DimensionMismatchError: If the vectors differ in length.
    """
    if q.shape != p.shape:
        raise DimensionMismatchError(
            f"cannot compare vectors of shapes {q.shape} and {p.shape}"
        )
    return float(np.dot(q, p))


def _pooling_matrix(
    sequences: list[Sequence[Token]], buckets: int, rows: np.ndarray
) -> np.ndarray:
    """
    Row i averages the embedding rows used by sequence i, so pooled = A @ E[rows].
    """
    pooling = np.zeros((len(sequences), len(rows)))
    for i, tokens in enumerate(sequences):
        if not tokens:
            continue
        ids = np.searchsorted(rows, [bucket_of(t, buckets) for t in tokens])
        np.add.at(pooling[i], ids, 1.0 / len(tokens))
    return pooling


def _logsumexp(scores: np.ndarray) -> np.ndarray:
    top = scores.max(axis=1, keepdims=True)
    return top[:, 0] + np.log(np.exp(scores - top).sum(axis=1))


def batch_loss_and_gradients(
    model: EncoderModel, batch: TrainingBatch
) -> tuple[float, Gradients]:
    """
    In-batch softmax cross-entropy and its analytic gradients.

    For question i the loss is log sum_j exp(s_ij) - s_ii, where s_ij is the
    dot product of question i with passage j; the batch loss is the mean over
    questions.

    Returns:
        tuple[float, Gradients]: The loss, the gradient for every embedding row the batch touches (rows sorted ascending), and the projection gradient.
    """
    size = len(batch)
    if size == 0:
        raise ConfigError("batch is empty")
    all_rows = [
        bucket_of(t, model.buckets)
        for tokens in (*batch.questions, *batch.passages)
        for t in tokens
    ]
    rows = np.unique(np.asarray(all_rows, dtype=np.int64))
    table = model.embeddings[rows]
    w = model.projection

    pool_q = _pooling_matrix(batch.questions, model.buckets, rows)
    pool_p = _pooling_matrix(batch.passages, model.buckets, rows)
    hidden_q = pool_q @ table
    hidden_p = pool_p @ table
    q = hidden_q @ w.T
    p = hidden_p @ w.T
    scores = q @ p.T

    lse = _logsumexp(scores)
    loss = float(np.mean(lse - np.diag(scores)))

    grad_scores = np.exp(scores - lse[:, None])
    grad_scores[np.diag_indices(size)] -= 1.0
    grad_scores /= size
    grad_q = grad_scores @ p
    grad_p = grad_scores.T @ q
    grad_w = grad_q.T @ hidden_q + grad_p.T @ hidden_p
    grad_table = pool_q.T @ (grad_q @ w) + pool_p.T @ (grad_p @ w)
    return loss, Gradients(rows=rows, embeddings=grad_table, projection=grad_w)


def batch_loss(model: EncoderModel, batch: TrainingBatch) -> float:
    """
    In-batch softmax cross-entropy without gradients; 0 for a batch of one.
    """
    loss, _ = batch_loss_and_gradients(model, batch)
    return max(loss, 0.0)


def train(
    model: EncoderModel,
    pairs: Sequence[TrainingPair],
    collection: PassageCollection,
    config: TrainConfig,
    show_progress: bool = False,
) -> EncoderModel:
    """
    Trains a copy of the model by plain SGD on the in-batch softmax loss.

    Pairs are reshuffled every epoch with a generator seeded from
    config.seed; the last partial batch of each epoch is dropped. A pair
    that carries its own positive tokens (masked ICT, general-domain QA) is
    trained against those and need not point into the collection.

    Args:
        model (EncoderModel): Starting parameters; left untouched.
        pairs (Sequence[TrainingPair]): Weak supervision.
        collection (PassageCollection): Passages the pairs point at.
        config (TrainConfig): Batch size, learning rate, epochs and seed.
        show_progress (bool): Draw a progress bar on stderr.

    Returns:
        EncoderModel: The trained copy, with the mean loss of every epoch appended to epoch_losses.

    Raises:
        ConfigError: If the batch size is below 2.
        UnknownPassageError: If a pair without its own positive points at a passage that is not in the collection.
    """
    if config.batch_size < 2:
        raise ConfigError("in-batch negatives require batch >= 2")
    missing = sorted(
        {
            p.passage_id
            for p in pairs
            if p.positive_tokens is None and p.passage_id not in collection
        }
    )
    if missing:
        preview = ", ".join(missing[:5])
        raise UnknownPassageError(
            f"{len(missing)} training pairs reference unknown passages: {preview}"
        )

    trained = model.copy()
    trained.config = config
    if config.epochs == 0:
        return trained

    questions = [pair.question_tokens for pair in pairs]
    positives = [
        pair.positive_tokens
        if pair.positive_tokens is not None
        else collection.get(pair.passage_id).tokens
        for pair in pairs
    ]
    batches_per_epoch = len(pairs) // config.batch_size
    if batches_per_epoch == 0:
        logger.warning(
            "Only %d pairs for batch size %d; no full batch to train on",
            len(pairs),
            config.batch_size,
        )
        return trained

    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    for epoch in tqdm(range(config.epochs), desc="Training", disable=not show_progress):
        order = rng.permutation(len(pairs))
        losses = []
        for b in range(batches_per_epoch):
            chosen = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = TrainingBatch(
                questions=[questions[i] for i in chosen],
                passages=[positives[i] for i in chosen],
            )
            loss, grads = batch_loss_and_gradients(trained, batch)
            trained.projection -= lr * grads.projection
            trained.embeddings[grads.rows] -= lr * grads.embeddings
            losses.append(loss)
        epoch_loss = float(np.mean(losses))
        trained.epoch_losses.append(epoch_loss)
        logger.info("Epoch %d/%d mean loss %.6f", epoch + 1, config.epochs, epoch_loss)
    return trained


class CheckpointHeader(BaseModel):
    kind: Literal["encoder"] = "encoder"
    dim: int
    buckets: int
    init_scale: float
    digest: str
    config: Optional[TrainConfig] = None
    epoch_losses: list[float] = Field(default_factory=list)
    manifest: Optional[RunManifest] = None


def save_checkpoint(
    model: EncoderModel, path: str | Path, manifest: Optional[RunManifest] = None
) -> None:
    """
    Writes the encoder parameters, training config and loss history to a checkpoint container.

    Args:
        model (EncoderModel): Encoder to save.
        path (str | Path): Checkpoint file to write.
        manifest (Optional[RunManifest]): Provenance stored in the header.
    """
    header = CheckpointHeader(
        dim=model.dim,
        buckets=model.buckets,
        init_scale=model.init_scale,
        digest=model.digest(),
        config=model.config,
        epoch_losses=model.epoch_losses,
        manifest=manifest,
    )
    write_container(path, header, pack_arrays(model.embeddings, model.projection))


def load_checkpoint(path: str | Path) -> EncoderModel:
    """
    Loads an encoder written by save_checkpoint, bit for bit.

    Raises:
        ContainerError: If the file is damaged or is not an encoder checkpoint.
    """
    header, payload = read_container(path, CheckpointHeader)
    embeddings, projection = unpack_arrays(
        payload, (header.buckets, header.dim), (header.dim, header.dim)
    )
    model = EncoderModel(
        embeddings=embeddings,
        projection=projection,
        init_scale=header.init_scale,
        config=header.config,
        epoch_losses=list(header.epoch_losses),
    )
    if model.digest() != header.digest:
        raise ContainerError(f"{path}: parameter digest mismatch")
    return model
