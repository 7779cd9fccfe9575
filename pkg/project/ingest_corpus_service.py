import logging
from pathlib import Path

from pydantic import BaseModel

from project import corpus
from project.errors import ConfigError
from project.manifest import build_manifest

logger = logging.getLogger(__name__)


class IngestCorpusResponse(BaseModel):
    """
    Counts describing the collection written by an ingest.
    """

    passage_count: int
    token_count: int
    collection_path: str


def ingest_corpus(
    corpus_path: str | Path, out_path: str | Path, max_tokens: int = 200
) -> IngestCorpusResponse:
    """
    Chunks a JSON-lines corpus into passages and writes the collection with its statistics.

    Args:
        corpus_path (str | Path): Corpus file of {"id", "title", "text"} records.
        out_path (str | Path): Where to write the collection.
        max_tokens (int): Token budget per passage, title included; 200 for article chunks, 350 for forum threads.

    Returns:
        IngestCorpusResponse: Passage and token counts of the written collection.

    Raises:
        ConfigError: If max_tokens is not positive.
        InputFormatError: If a record is malformed; the message names its line.
    """
    if max_tokens < 1:
        raise ConfigError(f"--max-tokens must be positive, got {max_tokens}")
    collection = corpus.ingest(corpus_path, max_tokens)
    manifest = build_manifest(
        "ingest", config={"max_tokens": max_tokens}, inputs=[corpus_path]
    )
    corpus.save_collection(collection, out_path, manifest=manifest)
    token_count = sum(len(p.tokens) for p in collection.passages)
    logger.info("Wrote %d passages to %s", len(collection), out_path)
    return IngestCorpusResponse(
        passage_count=len(collection),
        token_count=token_count,
        collection_path=str(out_path),
    )
