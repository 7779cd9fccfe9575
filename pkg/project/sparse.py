from collections import Counter
from typing import Sequence

from pydantic import BaseModel, ConfigDict, Field

from project.corpus import CollectionStats, Passage, idf
from project.text import Token

SparseVector = dict[Token, float]


class Bm25Params(BaseModel):
    """
    BM25 hyperparameters: k saturates term frequency, b controls length normalization.
    """

    model_config = ConfigDict(frozen=True)

    k: float = Field(default=1.2, gt=0)
    b: float = Field(default=0.75, ge=0, le=1)


def _length_norm(length: int, stats: CollectionStats, params: Bm25Params) -> float:
    return params.k * (1.0 - params.b + params.b * length / stats.avg_len)


def _term_weight(tf: int, term_idf: float, norm: float, params: Bm25Params) -> float:
    return term_idf * tf * (params.k + 1.0) / (tf + norm)


def bm25_direct(
    q: Sequence[Token], p: Passage, stats: CollectionStats, params: Bm25Params
) -> float:
    """
    Scores a passage with the BM25 sum over query token occurrences.

    A query term repeated n times contributes its passage weight n times.
    Terms absent from the passage contribute nothing.
    """
    counts = Counter(p.tokens)
    norm = _length_norm(len(p.tokens), stats, params)
    score = 0.0
    for term in q:
        tf = counts.get(term, 0)
        if tf:
            score += _term_weight(tf, idf(stats, term), norm, params)
    return score


def encode_query_sparse(q: Sequence[Token]) -> SparseVector:
    """
    Encodes a query as term counts.

    Every distinct term gets weight 1 per occurrence, so the dot product with
    a passage vector reproduces the occurrence sum of bm25_direct.
    """
    return {term: float(count) for term, count in Counter(q).items()}


def encode_passage_sparse(
    p: Passage, stats: CollectionStats, params: Bm25Params
) -> SparseVector:
    """
    Encodes a passage as the BM25 weight of each of its distinct terms.

    Weights are never negative because idf is not; zero weights are not stored.
    """
    norm = _length_norm(len(p.tokens), stats, params)
    vector: SparseVector = {}
    for term, tf in Counter(p.tokens).items():
        weight = _term_weight(tf, idf(stats, term), norm, params)
        if weight != 0.0:
            vector[term] = weight
    return vector


def dot_sparse(u: SparseVector, v: SparseVector) -> float:
    """
    Sum of u[t] * v[t] over the terms both vectors hold.
    """
    if len(u) > len(v):
        u, v = v, u
    return sum(weight * v[term] for term, weight in u.items() if term in v)

