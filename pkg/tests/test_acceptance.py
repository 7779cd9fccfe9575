"""
End-to-end zero-shot run on a synthetic collection of disjoint-vocabulary topics.

An encoder trained only on template questions generated from the collection
must retrieve passages of the right topic, and the hybrid must do at least
as well as either of its parts.
"""

import numpy as np
import pytest

from project import (
    build_index_service,
    generate_data_service,
    ingest_corpus_service,
    search_index_service,
    train_encoder_service,
)
from project.evaluation import EvalConfig, RunFile, evaluate_run, read_run

TOPICS = 10
PER_TOPIC = 200


def random_ranking_mrr(passage_ids: list[str], qrels: dict, queries: list[str], seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    rankings = {}
    for qid in queries:
        order = rng.permutation(len(passage_ids))
        rankings[qid] = [(passage_ids[i], float(len(order) - r)) for r, i in enumerate(order)]
    report = evaluate_run(RunFile(tag="random", rankings=rankings), qrels, EvalConfig())
    return report.means.mrr


@pytest.mark.slow
def test_trained_hybrid_beats_its_parts(tmp_path, write_corpus, topic_records, topic_queries):
    records = topic_records(topics=TOPICS, per_topic=PER_TOPIC)
    queries = topic_queries(topics=TOPICS, per_topic=5)
    corpus = write_corpus(records)
    queries_path = tmp_path / "queries.tsv"
    queries_path.write_text("".join(f"{qid}\t{text}\n" for qid, _, text in queries), encoding="utf-8")
    qrels = {
        qid: {f"t{topic}d{i}#0": 1 for i in range(PER_TOPIC)} for qid, topic, _ in queries
    }

    collection = tmp_path / "collection.json"
    ingested = ingest_corpus_service.ingest_corpus(corpus, collection)
    assert ingested.passage_count == TOPICS * PER_TOPIC

    pairs = tmp_path / "pairs.jsonl"
    generated = generate_data_service.generate_data(collection, "qgen", pairs, seed=0)
    assert generated.pairs_by_source == {"QGEN": generated.pair_count}

    encoder = tmp_path / "encoder.bin"
    trained = train_encoder_service.train_encoder(
        pairs,
        collection,
        encoder,
        dim=32,
        batch_size=16,
        learning_rate=0.5,
        epochs=10,
        seed=0,
        buckets=2**14,
        init_scale=0.5,
    )
    assert trained.epoch_losses[-1] < trained.epoch_losses[0]

    sparse_index = tmp_path / "bm25.bin"
    dense_index = tmp_path / "hybrid.bin"
    build_index_service.build_index(collection, sparse_index, shards=4)
    build_index_service.build_index(collection, dense_index, model_path=encoder, shards=4)

    def mrr_of(index, model, lam, tag):
        run = tmp_path / f"{tag}.txt"
        search_index_service.search_index(index, queries_path, run, model_path=model, lam=lam, k=100, tag=tag)
        return evaluate_run(read_run(run), qrels, EvalConfig()).means.mrr

    bm25 = mrr_of(sparse_index, None, 1.0, "bm25")
    dense = mrr_of(dense_index, encoder, 0.0, "dense")
    hybrid = mrr_of(dense_index, encoder, 1.0, "hybrid")
    baseline = random_ranking_mrr(
        [f"t{t}d{i}#0" for t in range(TOPICS) for i in range(PER_TOPIC)],
        qrels,
        [qid for qid, _, _ in queries],
    )

    assert dense >= 0.8
    assert dense > baseline
    assert hybrid >= max(bm25, dense) - 0.02
