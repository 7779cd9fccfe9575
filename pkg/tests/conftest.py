import json
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from project.corpus import Passage, PassageCollection


def topic_words(topic: int, size: int) -> list[str]:
    return [f"t{topic}w{j}" for j in range(size)]


@pytest.fixture
def write_corpus(tmp_path: Path) -> Callable[..., Path]:
    """
    Writes {"id", "title", "text"} records as a JSON-lines corpus file.
    """

    def write(records: list[dict], name: str = "corpus.jsonl") -> Path:
        path = tmp_path / name
        path.write_text(
            "".join(json.dumps(record) + "\n" for record in records), encoding="utf-8"
        )
        return path

    return write


@pytest.fixture
def topic_records() -> Callable[..., list[dict]]:
    """
    Builds a corpus of disjoint-vocabulary topics.

    Every record is three sentences of words drawn from its topic's
    vocabulary; record ids are "t{topic}d{index}".
    """

    def build(
        topics: int,
        per_topic: int,
        vocabulary: int = 8,
        sentence_len: int = 8,
        seed: int = 0,
    ) -> list[dict]:
        rng = np.random.default_rng(seed)
        records = []
        for topic in range(topics):
            words = topic_words(topic, vocabulary)
            for index in range(per_topic):
                sentences = [
                    " ".join(rng.choice(words, size=sentence_len)) + "."
                    for _ in range(3)
                ]
                records.append({"id": f"t{topic}d{index}", "text": " ".join(sentences)})
        return records

    return build


@pytest.fixture
def topic_queries() -> Callable[..., list[tuple[str, int, str]]]:
    """
    Template queries over topic words: (query_id, topic, text).
    """

    def build(
        topics: int, per_topic: int, vocabulary: int = 8, terms: int = 3, seed: int = 1
    ) -> list[tuple[str, int, str]]:
        rng = np.random.default_rng(seed)
        queries = []
        for topic in range(topics):
            words = topic_words(topic, vocabulary)
            for index in range(per_topic):
                chosen = rng.choice(words, size=terms, replace=False)
                queries.append(
                    (f"q{topic}x{index}", topic, "what is known about " + " ".join(chosen))
                )
        return queries

    return build


@pytest.fixture
def random_collection() -> Callable[..., PassageCollection]:
    """
    Random passages over a small vocabulary "v0".."v{vocab-1}".
    """

    def build(
        rng: np.random.Generator, passages: int = 40, vocab: int = 20, max_len: int = 15
    ) -> PassageCollection:
        items = []
        for i in range(passages):
            length = int(rng.integers(0, max_len + 1))
            tokens = [f"v{int(t)}" for t in rng.integers(0, vocab, size=length)]
            items.append(Passage(id=f"p{i:03d}", text=" ".join(tokens), tokens=tokens))
        return PassageCollection.from_passages(items)

    return build
