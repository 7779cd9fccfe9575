import hashlib
import logging
import math
from collections import Counter
from pathlib import Path
from typing import Iterable, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    PrivateAttr,
    ValidationError,
    field_validator,
    model_validator,
)

from project.errors import (
    ChunkingError,
    DuplicateIdError,
    EmptyCollectionError,
    InputFormatError,
)
from project.manifest import RunManifest
from project.text import Token, chunk_passage, tokenize

logger = logging.getLogger(__name__)

COLLECTION_FORMAT_VERSION = 1


class Passage(BaseModel):
    """
    A retrievable unit: one chunk of a source record with its title in front.
    """

    model_config = ConfigDict(frozen=True)

    id: str
    title: Optional[str] = None
    text: str
    tokens: list[Token]

    @classmethod
    def build(cls, id: str, title: Optional[str], text: str) -> "Passage":
        return cls(id=id, title=title, text=text, tokens=tokenize(title or "") + tokenize(text))

    @property
    def title_tokens(self) -> list[Token]:
        return tokenize(self.title or "")

    @property
    def document_id(self) -> str:
        return document_id(self.id)


class CollectionStats(BaseModel):
    """
    Everything BM25 and sentence salience need from the collection.

    df maps each token to the number of passages containing it; avg_len is
    the mean passage length in tokens.
    """

    model_config = ConfigDict(frozen=True)

    doc_count: int
    df: dict[Token, int]
    avg_len: float

    @model_validator(mode="after")
    def _check_counts(self) -> "CollectionStats":
        if self.doc_count < 1:
            raise ValueError("doc_count must be positive")
        for term, count in self.df.items():
            if not 1 <= count <= self.doc_count:
                raise ValueError(f"df[{term!r}]={count} outside [1, {self.doc_count}]")
        return self

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


class PassageCollection(BaseModel):
    """
    An ordered, immutable set of passages and the statistics frozen at ingest.
    """

    model_config = ConfigDict(frozen=True)

    passages: list[Passage]
    stats: Optional[CollectionStats] = None

    _by_id: dict[str, Passage] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _index_ids(self) -> "PassageCollection":
        lookup: dict[str, Passage] = {}
        for passage in self.passages:
            if passage.id in lookup:
                raise ValueError(f"duplicate passage id {passage.id!r}")
            lookup[passage.id] = passage
        self._by_id = lookup
        return self

    @classmethod
    def from_passages(cls, passages: Iterable[Passage]) -> "PassageCollection":
        passages = list(passages)
        stats = compute_stats(passages) if passages else None
        return cls(passages=passages, stats=stats)

    def __len__(self) -> int:
        return len(self.passages)

    def get(self, passage_id: str) -> Optional[Passage]:
        return self._by_id.get(passage_id)

    def __contains__(self, passage_id: object) -> bool:
        return passage_id in self._by_id

    def require_stats(self) -> CollectionStats:
        if self.stats is None:
            raise EmptyCollectionError("collection is empty: doc_count = 0")
        return self.stats


class CorpusRecord(BaseModel):
    id: str
    title: Optional[str] = None
    text: str

    @field_validator("id")
    @classmethod
    def _single_word(cls, value: str) -> str:
        # ids end up as a column of whitespace-separated run files
        if not value or any(c.isspace() for c in value):
            raise ValueError(f"id must be a non-empty word without whitespace, got {value!r}")
        return value


class CollectionFile(BaseModel):
    version: int = COLLECTION_FORMAT_VERSION
    manifest: Optional[RunManifest] = None
    stats: Optional[CollectionStats] = None
    passages: list[Passage]


def document_id(passage_id: str) -> str:
    """
    Returns the source record id of a chunk id "{record_id}#{chunk_index}".
    """
    head, sep, tail = passage_id.rpartition("#")
    if sep and tail.isdigit():
        return head
    return passage_id


def compute_stats(passages: list[Passage]) -> CollectionStats:
    """
    Computes document frequencies and average length over chunked passages.

    Raises:
        EmptyCollectionError: When there are no passages.
    """
    if not passages:
        raise EmptyCollectionError("collection is empty: doc_count = 0")
    df: Counter[Token] = Counter()
    total = 0
    for passage in passages:
        df.update(set(passage.tokens))
        total += len(passage.tokens)
    avg_len = total / len(passages)
    if avg_len == 0:
        # all passages empty; any positive value leaves BM25 scores at zero
        avg_len = 1.0
    return CollectionStats(
        doc_count=len(passages), df=dict(sorted(df.items())), avg_len=avg_len
    )


def idf(stats: CollectionStats, t: Token) -> float:
    """
    Smoothed, non-negative inverse document frequency.

    ln(1 + (N - df + 0.5) / (df + 0.5)), with df = 0 for terms the
    collection never saw.
    """
    df = stats.df.get(t, 0)
    return math.log(1.0 + (stats.doc_count - df + 0.5) / (df + 0.5))


def ingest(path: str | Path, max_tokens: int) -> PassageCollection:
    """
    Reads a JSON-lines corpus and chunks every record into passages.

    Each record needs string fields "id" and "text" and may have "title".
    Chunk ids are "{record_id}#{chunk_index}". Records whose body has no
    sentence produce no passage and are logged.

    Args:
        path (str | Path): UTF-8 file with one JSON object per line; blank lines are skipped.
        max_tokens (int): Token budget per passage, title included.

    Returns:
        PassageCollection: Passages in file order with stats computed over them (None when empty).

    Raises:
        InputFormatError: On an unreadable file or a malformed record, naming the line.
        DuplicateIdError: When two records share an id.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise InputFormatError(f"cannot read corpus: {e}", path=str(path), line=0)

    passages: list[Passage] = []
    seen: dict[str, int] = {}
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = CorpusRecord.model_validate_json(line)
        except ValidationError as e:
            raise InputFormatError(
                f"malformed corpus record: {e.errors()[0]['msg']}",
                path=str(path),
                line=line_no,
            )
        if record.id in seen:
            raise DuplicateIdError(
                f"duplicate record id {record.id!r} (first seen on line {seen[record.id]})",
                path=str(path),
                line=line_no,
            )
        seen[record.id] = line_no
        try:
            chunks = chunk_passage(record.title or "", record.text, max_tokens)
        except ChunkingError as e:
            raise ChunkingError(f"{path}, line {line_no}: {e.detail}")
        if not chunks:
            logger.warning("Record %r on line %d has no sentences", record.id, line_no)
        for index, (_, chunk_text) in enumerate(chunks):
            passages.append(Passage.build(f"{record.id}#{index}", record.title, chunk_text))

    collection = PassageCollection.from_passages(passages)
    logger.info(
        "Ingested %d records into %d passages from %s", len(seen), len(passages), path
    )
    return collection


def save_collection(
    collection: PassageCollection,
    path: str | Path,
    manifest: Optional[RunManifest] = None,
) -> None:
    document = CollectionFile(
        manifest=manifest, stats=collection.stats, passages=collection.passages
    )
    Path(path).write_text(document.model_dump_json(), encoding="utf-8")


def load_collection(path: str | Path) -> PassageCollection:
    """
    Loads a collection written by save_collection.

    Raises:
        InputFormatError: If the file is missing, unparseable or of another version.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise InputFormatError(f"cannot read collection: {e}", path=str(path), line=0)
    try:
        document = CollectionFile.model_validate_json(raw)
    except ValidationError as e:
        raise InputFormatError(f"malformed collection file: {e.errors()[0]['msg']}", path=str(path))
    if document.version != COLLECTION_FORMAT_VERSION:
        raise InputFormatError(
            f"unsupported collection version {document.version}", path=str(path)
        )
    try:
        return PassageCollection(passages=document.passages, stats=document.stats)
    except ValidationError as e:
        raise DuplicateIdError(e.errors()[0]["msg"], path=str(path))

