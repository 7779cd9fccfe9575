import logging
import os
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, TypeAdapter, ValidationError
from scipy import sparse as sp
from tqdm import tqdm

from project.container import pack_arrays, read_container, unpack_arrays, write_container
from project.corpus import CollectionStats, PassageCollection
from project.dense import DenseVector, EncoderModel, encode
from project.errors import ConfigError, ContainerError, IndexCompatibilityError
from project.manifest import RunManifest
from project.sparse import Bm25Params, SparseVector, encode_passage_sparse, encode_query_sparse
from project.text import Token

logger = logging.getLogger(__name__)


class ScoredHit(BaseModel):
    passage_id: str
    score: float
    sparse_part: float
    dense_part: float
    lam: float


@dataclass(frozen=True)
class IndexShard:
    rows: np.ndarray
    id_rank: np.ndarray
    sparse_matrix: sp.csr_matrix
    dense_matrix: Optional[np.ndarray]


@dataclass(frozen=True)
class HybridIndex:
    """
    Every passage encoded as a hybrid vector, split round-robin into shards.

    The index is immutable once built, so any number of searches may run on
    it at the same time.
    """

    passage_ids: list[str]
    sparse_vectors: list[SparseVector]
    dense_vectors: Optional[np.ndarray]
    vocabulary: dict[Token, int]
    shards: list[IndexShard]
    params: Bm25Params
    stats: Optional[CollectionStats]
    dim: int
    encoder_digest: Optional[str] = None
    manifest: Optional[RunManifest] = None

    def __len__(self) -> int:
        return len(self.passage_ids)

    @property
    def is_dense(self) -> bool:
        return self.dense_vectors is not None

    @classmethod
    def assemble(
        cls,
        passage_ids: list[str],
        sparse_vectors: list[SparseVector],
        dense_vectors: Optional[np.ndarray],
        shard_count: int,
        params: Bm25Params,
        stats: Optional[CollectionStats],
        encoder_digest: Optional[str] = None,
        manifest: Optional[RunManifest] = None,
    ) -> "HybridIndex":
        """
        Lays the passage vectors out as per-shard matrices.

        Position i goes to shard i mod shard_count. Building from the same
        vectors always yields the same matrices, whether they were just
        encoded or loaded from disk.
        """
        if shard_count < 1:
            raise ConfigError(f"shards must be positive, got {shard_count}")
        vocabulary = {
            term: column
            for column, term in enumerate(sorted({t for vec in sparse_vectors for t in vec}))
        }
        id_order = sorted(range(len(passage_ids)), key=passage_ids.__getitem__)
        id_rank = np.empty(len(passage_ids), dtype=np.int64)
        id_rank[id_order] = np.arange(len(passage_ids))

        shards = []
        for shard in range(shard_count):
            rows = np.arange(shard, len(passage_ids), shard_count, dtype=np.int64)
            indptr = [0]
            indices: list[int] = []
            data: list[float] = []
            for row in rows:
                vec = sparse_vectors[row]
                for term in sorted(vec):
                    indices.append(vocabulary[term])
                    data.append(vec[term])
                indptr.append(len(indices))
            matrix = sp.csr_matrix(
                (
                    np.asarray(data, dtype=np.float64),
                    np.asarray(indices, dtype=np.int64),
                    np.asarray(indptr, dtype=np.int64),
                ),
                shape=(len(rows), len(vocabulary)),
            )
            dense = None
            if dense_vectors is not None:
                dense = np.ascontiguousarray(dense_vectors[rows])
            shards.append(
                IndexShard(rows=rows, id_rank=id_rank[rows], sparse_matrix=matrix, dense_matrix=dense)
            )
        dim = 0 if dense_vectors is None else dense_vectors.shape[1]
        return cls(
            passage_ids=list(passage_ids),
            sparse_vectors=sparse_vectors,
            dense_vectors=dense_vectors,
            vocabulary=vocabulary,
            shards=shards,
            params=params,
            stats=stats,
            dim=dim,
            encoder_digest=encoder_digest,
            manifest=manifest,
        )


def build_index(
    collection: PassageCollection,
    stats: Optional[CollectionStats],
    params: Bm25Params,
    model: Optional[EncoderModel] = None,
    shards: int = 1,
    manifest: Optional[RunManifest] = None,
    show_progress: bool = False,
) -> HybridIndex:
    """
    Encodes every passage of the collection offline into a hybrid index.

    Args:
        collection (PassageCollection): Passages to index, in order.
        stats (Optional[CollectionStats]): Statistics used for the passage BM25 weights; may be None only for an empty collection.
        params (Bm25Params): BM25 k and b.
        model (Optional[EncoderModel]): Encoder for the dense part; without it the index is sparse-only.
        shards (int): Number of round-robin shards.
        manifest (Optional[RunManifest]): Provenance stored with the index.
        show_progress (bool): Draw a progress bar on stderr.

    Returns:
        HybridIndex: The built index.

    Raises:
        ConfigError: If shards < 1 or stats are missing for a non-empty collection.
    """
    if shards < 1:
        raise ConfigError(f"shards must be positive, got {shards}")
    if stats is None and len(collection) > 0:
        raise ConfigError("collection statistics are required to index passages")

    sparse_vectors = []
    dense_rows = []
    for passage in tqdm(collection.passages, desc="Indexing", disable=not show_progress):
        sparse_vectors.append(encode_passage_sparse(passage, stats, params))
        if model is not None:
            dense_rows.append(encode(model, passage.tokens))

    dense_vectors = None
    if model is not None:
        dense_vectors = (
            np.vstack(dense_rows) if dense_rows else np.zeros((0, model.dim))
        )
    index = HybridIndex.assemble(
        passage_ids=[p.id for p in collection.passages],
        sparse_vectors=sparse_vectors,
        dense_vectors=dense_vectors,
        shard_count=shards,
        params=params,
        stats=stats,
        encoder_digest=None if model is None else model.digest(),
        manifest=manifest,
    )
    logger.info(
        "Indexed %d passages into %d shards (dense dim %d)", len(index), shards, index.dim
    )
    return index


def check_compatibility(index: HybridIndex, model: Optional[EncoderModel]) -> None:
    """
    Raises:
        IndexCompatibilityError: If a dense model meets a sparse-only index, a dense index has no model, or the dimensions differ.
    """
    if model is not None and not index.is_dense:
        raise IndexCompatibilityError("dense query requested against a sparse-only index")
    if model is None and index.is_dense:
        raise IndexCompatibilityError("index holds dense vectors; a model is required to search it")
    if model is not None and model.dim != index.dim:
        raise IndexCompatibilityError(
            f"model dimension {model.dim} does not match index dimension {index.dim}"
        )


def encoder_matches(index: HybridIndex, model: EncoderModel) -> bool:
    """
    Whether the model has exactly the parameters the index was built with.
    """
    return index.encoder_digest is None or model.digest() == index.encoder_digest


def _top_k(scores: np.ndarray, id_rank: np.ndarray, k: int) -> np.ndarray:
    """
    Positions of the k best scores, ties going to the smaller id rank.

    Only candidates at or above the k-th best score are sorted; every score
    tied with the k-th is kept as a candidate so the tie-break stays exact.
    """
    if k < len(scores):
        threshold = np.partition(scores, len(scores) - k)[len(scores) - k]
        candidates = np.flatnonzero(scores >= threshold)
    else:
        candidates = np.arange(len(scores))
    order = np.lexsort((id_rank[candidates], -scores[candidates]))[:k]
    return candidates[order]


def _scan_shard(
    shard: IndexShard,
    query_sparse: np.ndarray,
    query_dense: Optional[DenseVector],
    lam: float,
    k: int,
) -> list[tuple[float, int, int, float, float]]:
    sparse_scores = shard.sparse_matrix @ query_sparse
    if query_dense is None or shard.dense_matrix is None:
        dense_scores = np.zeros(len(shard.rows))
    else:
        dense_scores = (shard.dense_matrix * query_dense).sum(axis=1)
    scores = lam * sparse_scores + dense_scores
    top = _top_k(scores, shard.id_rank, k)
    return [
        (
            float(scores[i]),
            int(shard.id_rank[i]),
            int(shard.rows[i]),
            float(sparse_scores[i]),
            float(dense_scores[i]),
        )
        for i in top
    ]


def retrieve(
    index: HybridIndex,
    query_tokens: Sequence[Token],
    model: Optional[EncoderModel],
    lam: float = 1.0,
    k: int = 100,
    executor: Optional[Executor] = None,
) -> list[ScoredHit]:
    """
    Exact top-k search: every passage is scored with lam * BM25 + dense dot product.

    Each shard is scanned in full and keeps its own top k; the shard lists are
    merged by score, ties going to the smaller passage id, so the result does
    not depend on the number of shards.

    Args:
        index (HybridIndex): Index to search.
        query_tokens (Sequence[Token]): Tokenized query.
        model (Optional[EncoderModel]): Encoder for the dense query part; required for dense indexes.
        lam (float): Weight of the BM25 part.
        k (int): Number of hits.
        executor (Optional[Executor]): Pool for the shard fan-out; one is created when the index has several shards and none is given.

    Returns:
        list[ScoredHit]: At most k hits, best first.

    Raises:
        ConfigError: If k < 1 or lam < 0.
        IndexCompatibilityError: If model and index do not fit together.
    """
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    check_compatibility(index, model)

    query_sparse = np.zeros(len(index.vocabulary))
    for term, weight in encode_query_sparse(query_tokens).items():
        column = index.vocabulary.get(term)
        if column is not None:
            query_sparse[column] = weight
    query_dense = None if model is None else encode(model, query_tokens)

    def scan(shard: IndexShard):
        return _scan_shard(shard, query_sparse, query_dense, lam, k)

    if len(index.shards) == 1:
        partials = [scan(index.shards[0])]
    elif executor is not None:
        partials = list(executor.map(scan, index.shards))
    else:
        with ThreadPoolExecutor(max_workers=_worker_count(index)) as pool:
            partials = list(pool.map(scan, index.shards))

    merged = sorted(
        (hit for partial in partials for hit in partial), key=lambda h: (-h[0], h[1])
    )[:k]
    return [
        ScoredHit(
            passage_id=index.passage_ids[row],
            score=score,
            sparse_part=sparse_part,
            dense_part=dense_part,
            lam=lam,
        )
        for score, _, row, sparse_part, dense_part in merged
    ]


def retrieve_batch(
    index: HybridIndex,
    queries: Sequence[Sequence[Token]],
    model: Optional[EncoderModel],
    lam: float = 1.0,
    k: int = 100,
    show_progress: bool = False,
) -> list[list[ScoredHit]]:
    """
    Runs retrieve for many queries, sharing one thread pool across them.
    """
    with ThreadPoolExecutor(max_workers=_worker_count(index)) as pool:
        return [
            retrieve(index, tokens, model, lam=lam, k=k, executor=pool)
            for tokens in tqdm(queries, desc="Searching", disable=not show_progress)
        ]


def _worker_count(index: HybridIndex) -> int:
    return max(1, min(len(index.shards), os.cpu_count() or 1))


class IndexRecord(BaseModel):
    id: str
    terms: list[Token]


class IndexHeader(BaseModel):
    kind: Literal["index"] = "index"
    passage_count: int
    dim: int
    shards: int
    params: Bm25Params
    stats: Optional[CollectionStats] = None
    stats_digest: Optional[str] = None
    encoder_digest: Optional[str] = None
    records_len: int
    weights_len: int
    manifest: Optional[RunManifest] = None


_RECORDS = TypeAdapter(list[IndexRecord])


def save_index(index: HybridIndex, path: str | Path) -> None:
    records = [
        IndexRecord(id=pid, terms=sorted(vec))
        for pid, vec in zip(index.passage_ids, index.sparse_vectors)
    ]
    weights = np.asarray(
        [vec[t] for vec in index.sparse_vectors for t in sorted(vec)], dtype=np.float64
    )
    records_bytes = _RECORDS.dump_json(records)
    arrays = [weights]
    if index.dense_vectors is not None:
        arrays.append(index.dense_vectors)
    header = IndexHeader(
        passage_count=len(index),
        dim=index.dim,
        shards=len(index.shards),
        params=index.params,
        stats=index.stats,
        stats_digest=None if index.stats is None else index.stats.digest(),
        encoder_digest=index.encoder_digest,
        records_len=len(records_bytes),
        weights_len=len(weights),
        manifest=index.manifest,
    )
    write_container(path, header, records_bytes + pack_arrays(*arrays))


def load_index(path: str | Path) -> HybridIndex:
    """
    Loads an index written by save_index; searches on it match the original bit for bit.

    Raises:
        ContainerError: If the file is damaged, of another version, or not an index.
    """
    header, payload = read_container(path, IndexHeader)
    if header.records_len > len(payload):
        raise ContainerError(f"{path}: records section exceeds payload")
    try:
        records = _RECORDS.validate_json(payload[: header.records_len])
    except ValidationError as e:
        raise ContainerError(f"{path}: malformed passage records: {e.errors()[0]['msg']}")
    if len(records) != header.passage_count:
        raise ContainerError(f"{path}: expected {header.passage_count} records, found {len(records)}")
    if header.stats is not None and header.stats.digest() != header.stats_digest:
        raise ContainerError(f"{path}: statistics digest mismatch")

    shapes: list[tuple[int, ...]] = [(header.weights_len,)]
    if header.dim > 0:
        shapes.append((header.passage_count, header.dim))
    arrays = unpack_arrays(payload[header.records_len :], *shapes)
    weights = arrays[0]
    dense_vectors = arrays[1] if header.dim > 0 else None

    if sum(len(r.terms) for r in records) != header.weights_len:
        raise ContainerError(f"{path}: term and weight counts disagree")
    sparse_vectors = []
    offset = 0
    for record in records:
        sparse_vectors.append(
            {t: float(w) for t, w in zip(record.terms, weights[offset : offset + len(record.terms)])}
        )
        offset += len(record.terms)

    return HybridIndex.assemble(
        passage_ids=[r.id for r in records],
        sparse_vectors=sparse_vectors,
        dense_vectors=dense_vectors,
        shard_count=header.shards,
        params=header.params,
        stats=header.stats,
        encoder_digest=header.encoder_digest,
        manifest=header.manifest,
    )
