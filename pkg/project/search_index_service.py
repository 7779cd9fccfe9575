import logging
from pathlib import Path
from typing import Optional

from pydantic import BaseModel

from project import dense, evaluation, search
from project.errors import ConfigError, DuplicateIdError, InputFormatError
from project.manifest import build_manifest, write_sidecar
from project.text import tokenize

logger = logging.getLogger(__name__)


class SearchIndexResponse(BaseModel):
    """
    Number of searched queries and of hits written to the run file.
    """

    query_count: int
    hit_count: int
    run_path: str


def read_queries(path: str | Path) -> list[tuple[str, str]]:
    """
    Reads "query_id<TAB>query text" lines; blank lines are skipped.

    Raises:
        InputFormatError: On a missing file, a line without a tab or a query id with whitespace, naming the line.
        DuplicateIdError: When a query id repeats.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise InputFormatError(f"cannot read queries: {e}", path=str(path), line=0)
    queries = []
    seen: set[str] = set()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        qid, sep, text = line.partition("\t")
        qid = qid.strip()
        if not sep or not qid:
            raise InputFormatError(
                "expected 'query_id<TAB>query text'", path=str(path), line=line_no
            )
        if any(c.isspace() for c in qid):
            raise InputFormatError(
                f"query id {qid!r} contains whitespace", path=str(path), line=line_no
            )
        if qid in seen:
            raise DuplicateIdError(f"duplicate query id {qid!r}", path=str(path), line=line_no)
        seen.add(qid)
        queries.append((qid, text))
    return queries


def search_index(
    index_path: str | Path,
    queries_path: str | Path,
    out_run: str | Path,
    model_path: Optional[str | Path] = None,
    lam: float = 1.0,
    k: int = 100,
    tag: str = "hybrid",
    show_progress: bool = False,
) -> SearchIndexResponse:
    """
    Searches every query of a query file and writes a TREC run.

    Args:
        index_path (str | Path): Index written by the index command.
        queries_path (str | Path): Query file, one "query_id<TAB>text" per line.
        out_run (str | Path): Run file to write.
        model_path (Optional[str | Path]): Encoder checkpoint; required for dense indexes.
        lam (float): Weight of the BM25 part.
        k (int): Hits per query.
        tag (str): Run tag written in the last column.
        show_progress (bool): Draw a progress bar on stderr.

    Returns:
        SearchIndexResponse: Number of queries and of written run lines.

    Raises:
        IndexCompatibilityError: If a dense index is searched without a model or the model does not fit the index.
    """
    if not tag or any(c.isspace() for c in tag):
        raise ConfigError(f"run tag must be a non-empty word, got {tag!r}")
    index = search.load_index(index_path)
    model = dense.load_checkpoint(model_path) if model_path is not None else None
    search.check_compatibility(index, model)
    if model is not None and not search.encoder_matches(index, model):
        logger.warning("Model parameters differ from the encoder the index was built with")

    queries = read_queries(queries_path)
    results = search.retrieve_batch(
        index,
        [tokenize(text) for _, text in queries],
        model,
        lam=lam,
        k=k,
        show_progress=show_progress,
    )
    run = evaluation.RunFile(
        tag=tag,
        rankings={
            qid: [(hit.passage_id, hit.score) for hit in hits]
            for (qid, _), hits in zip(queries, results)
        },
    )
    evaluation.write_run(run, out_run)
    inputs = [index_path, queries_path] + ([model_path] if model_path is not None else [])
    write_sidecar(
        build_manifest("search", config={"lambda": lam, "k": k, "tag": tag}, inputs=inputs),
        out_run,
    )
    hit_count = sum(len(hits) for hits in results)
    logger.info("Searched %d queries, wrote %d hits to %s", len(queries), hit_count, out_run)
    return SearchIndexResponse(query_count=len(queries), hit_count=hit_count, run_path=str(out_run))
