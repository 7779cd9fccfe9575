import logging
from pathlib import Path
from typing import Optional

from pydantic import BaseModel

from project import corpus, dense, search
from project.errors import config_from
from project.manifest import build_manifest
from project.sparse import Bm25Params

logger = logging.getLogger(__name__)


class BuildIndexResponse(BaseModel):
    """
    Size and layout of a freshly built index; dim is 0 for a sparse-only index.
    """

    passage_count: int
    shards: int
    dim: int
    index_path: str


def build_index(
    collection_path: str | Path,
    out_index: str | Path,
    model_path: Optional[str | Path] = None,
    shards: int = 4,
    k: float = 1.2,
    b: float = 0.75,
    show_progress: bool = False,
) -> BuildIndexResponse:
    """
    Encodes a collection into a hybrid index file.

    Without a model checkpoint the index is sparse-only and search reduces to BM25.

    Args:
        collection_path (str | Path): Collection written by ingest.
        out_index (str | Path): Index file to write.
        model_path (Optional[str | Path]): Encoder checkpoint for the dense part.
        shards (int): Round-robin shard count.
        k (float): BM25 term-frequency saturation.
        b (float): BM25 length normalization.
        show_progress (bool): Draw a progress bar on stderr.

    Returns:
        BuildIndexResponse: Size, shard count and dense dimension of the index (0 when sparse-only).
    """
    params = config_from(Bm25Params, k=k, b=b)
    collection = corpus.load_collection(collection_path)
    model = dense.load_checkpoint(model_path) if model_path is not None else None
    inputs = [collection_path] + ([model_path] if model_path is not None else [])
    manifest = build_manifest(
        "index", config={"shards": shards, **params.model_dump()}, inputs=inputs
    )
    index = search.build_index(
        collection,
        collection.stats,
        params,
        model=model,
        shards=shards,
        manifest=manifest,
        show_progress=show_progress,
    )
    search.save_index(index, out_index)
    return BuildIndexResponse(
        passage_count=len(index), shards=shards, dim=index.dim, index_path=str(out_index)
    )
