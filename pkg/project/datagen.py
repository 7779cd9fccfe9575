import hashlib
import logging
from abc import ABC, abstractmethod
from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from project.corpus import CollectionStats, Passage, PassageCollection, document_id, idf
from project.errors import ConfigError, InputFormatError
from project.text import Sentence, Token, split_sentences, tokenize

logger = logging.getLogger(__name__)

QUESTION_TEMPLATE = ["what", "is", "known", "about"]
TEMPLATE_TERMS = 5
PASSAGE_QUESTION_TOKENS = 512


class Source(str, Enum):
    ICT = "ICT"
    NGRAM = "NGRAM"
    QGEN = "QGEN"
    EXTERNAL = "EXTERNAL"
    QA = "QA"


class TrainingPair(BaseModel):
    """
    A synthetic question and the passage it was generated from.

    positive_tokens is set when the positive differs from the stored passage
    (masked ICT pairs) or when there is no stored passage at all (general
    domain QA pairs).
    """

    model_config = ConfigDict(frozen=True)

    question_tokens: list[Token]
    passage_id: str
    source: Source
    masked: bool = False
    positive_tokens: Optional[list[Token]] = None

    @field_validator("question_tokens")
    @classmethod
    def _non_empty(cls, tokens: list[Token]) -> list[Token]:
        if not tokens:
            raise ValueError("question_tokens must not be empty")
        return tokens


class GenConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    ict_max_sentences: int = Field(default=5, ge=1)
    ict_mask_rate: float = Field(default=0.9, ge=0, le=1)
    ngram_n: int = Field(default=16, ge=1)
    ngram_stride: int = Field(default=8, ge=1)
    salient_top_k: int = Field(default=5, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _stride_fits(self) -> "GenConfig":
        if self.ngram_n < self.ngram_stride:
            raise ValueError(
                f"ngram_n ({self.ngram_n}) must be >= ngram_stride ({self.ngram_stride})"
            )
        return self


def passage_rng(seed: int, key: str) -> np.random.Generator:
    """
    Generator seeded from the global seed and a stable hash of key.

    Draws for one passage never depend on which other passages were processed.
    """
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed, int.from_bytes(digest, "little")])


def gen_ict(
    p: Passage, cfg: GenConfig, rng: np.random.Generator
) -> list[tuple[TrainingPair, list[Token]]]:
    """
    Inverse cloze pairs: body sentences become pseudo-queries for their own passage.

    Up to ict_max_sentences distinct sentences are drawn uniformly without
    replacement. For each one, with probability ict_mask_rate, the sentence is
    cut out of the positive passage.

    Returns:
        list[tuple[TrainingPair, list[Token]]]: Each pair with the tokens of the positive passage it should be trained against.
    """
    sentences = split_sentences(p.text)
    if not sentences:
        return []
    title_tokens = p.title_tokens
    sentence_tokens = [tokenize(s.text) for s in sentences]
    picks = rng.choice(len(sentences), size=min(cfg.ict_max_sentences, len(sentences)), replace=False)

    samples = []
    for index in picks:
        index = int(index)
        masked = bool(rng.random() < cfg.ict_mask_rate)
        query = sentence_tokens[index]
        if not query:
            continue
        if masked:
            positive = title_tokens + [
                t for i, tokens in enumerate(sentence_tokens) if i != index for t in tokens
            ]
        else:
            positive = list(p.tokens)
        pair = TrainingPair(
            question_tokens=query,
            passage_id=p.id,
            source=Source.ICT,
            masked=masked,
            positive_tokens=positive if masked else None,
        )
        samples.append((pair, positive))
    return samples


def ngram_windows(length: int, n: int, stride: int) -> list[tuple[int, int]]:
    """
    Window bounds [start, end) at offsets 0, stride, 2*stride, ...

    Windows shorter than stride are dropped unless they are the only one.
    """
    windows = []
    for start in range(0, length, stride):
        end = min(start + n, length)
        if end - start >= stride or start == 0:
            windows.append((start, end))
    return windows


def gen_ngram(p: Passage, cfg: GenConfig) -> list[TrainingPair]:
    """
    Sliding-window pseudo-queries over the passage tokens; the passage is not masked.
    """
    return [
        TrainingPair(question_tokens=p.tokens[start:end], passage_id=p.id, source=Source.NGRAM)
        for start, end in ngram_windows(len(p.tokens), cfg.ngram_n, cfg.ngram_stride)
    ]


def salient_sentences(p: Passage, stats: CollectionStats, k: int) -> list[Sentence]:
    """
    The k body sentences whose rarest term has the highest idf.

    Ties go to the earlier sentence. A sentence without tokens scores 0.
    """
    sentences = split_sentences(p.text)
    scored = []
    for position, sentence in enumerate(sentences):
        tokens = tokenize(sentence.text)
        score = max((idf(stats, t) for t in tokens), default=0.0)
        scored.append((-score, position, sentence))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [sentence for _, _, sentence in scored[:k]]


class QuestionGenerator(ABC):
    source: Source

    @abstractmethod
    def questions(
        self, p: Passage, stats: CollectionStats, cfg: GenConfig
    ) -> list[str]:
        """
        Returns the raw question strings produced for a passage, possibly with repeats.
        """


class TemplateQuestionGenerator(QuestionGenerator):
    """
    Deterministic stand-in for a neural question generator.

    A question is "what is known about" followed by the highest-idf distinct
    terms of the input, listed in the order they first appear. It is asked once
    of the passage (truncated to 512 tokens) and once of each salient sentence.
    """

    source = Source.QGEN

    def __init__(self, terms: int = TEMPLATE_TERMS):
        self.terms = terms

    def generate(self, tokens: list[Token], stats: CollectionStats) -> Optional[str]:
        first_seen: dict[Token, int] = {}
        for position, token in enumerate(tokens):
            first_seen.setdefault(token, position)
        if not first_seen:
            return None
        ranked = sorted(first_seen, key=lambda t: (-idf(stats, t), first_seen[t]))
        chosen = sorted(ranked[: self.terms], key=first_seen.__getitem__)
        return " ".join(QUESTION_TEMPLATE + chosen)

    def questions(
        self, p: Passage, stats: CollectionStats, cfg: GenConfig
    ) -> list[str]:
        inputs = [p.tokens[:PASSAGE_QUESTION_TOKENS]]
        inputs += [tokenize(s.text) for s in salient_sentences(p, stats, cfg.salient_top_k)]
        generated = (self.generate(tokens, stats) for tokens in inputs)
        return [q for q in generated if q is not None]


class ExternalQuestionRecord(BaseModel):
    question: str
    passage_id: str


class ExternalQuestionGenerator(QuestionGenerator):
    """
    Serves questions produced elsewhere, read from a JSON-lines file of
    {"question", "passage_id"} records.
    """

    source = Source.EXTERNAL

    def __init__(self, by_passage: dict[str, list[str]]):
        self.by_passage = by_passage

    @classmethod
    def from_file(cls, path: str | Path) -> "ExternalQuestionGenerator":
        by_passage: dict[str, list[str]] = defaultdict(list)
        for record in _read_jsonl(path, ExternalQuestionRecord):
            by_passage[record.passage_id].append(record.question)
        return cls(dict(by_passage))

    def questions(
        self, p: Passage, stats: CollectionStats, cfg: GenConfig
    ) -> list[str]:
        return list(self.by_passage.get(p.id, []))

    def unknown_passages(self, collection: PassageCollection) -> list[str]:
        return sorted(pid for pid in self.by_passage if pid not in collection)


def gen_questions(
    p: Passage, stats: CollectionStats, cfg: GenConfig, generator: QuestionGenerator
) -> list[TrainingPair]:
    """
    Turns the generator's questions for a passage into training pairs.

    Exact duplicate question strings for the same passage are kept once, and
    questions without any token are skipped.
    """
    pairs = []
    seen: set[str] = set()
    for question in generator.questions(p, stats, cfg):
        if question in seen:
            continue
        seen.add(question)
        tokens = tokenize(question)
        if tokens:
            pairs.append(
                TrainingPair(question_tokens=tokens, passage_id=p.id, source=generator.source)
            )
    return pairs


def subsample_corpus(
    collection: PassageCollection, fraction: float, seed: int
) -> PassageCollection:
    """
    Keeps each source document, with all of its chunks, with probability fraction.

    Every document gets its own seeded draw, so for a fixed seed the
    documents kept at a smaller fraction are a subset of those kept at a
    larger one. Statistics are recomputed over the kept passages.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return collection
    draws: dict[str, bool] = {}
    kept = []
    for passage in collection.passages:
        doc = document_id(passage.id)
        if doc not in draws:
            draws[doc] = bool(passage_rng(seed, doc).random() < fraction)
        if draws[doc]:
            kept.append(passage)
    logger.info(
        "Kept %d of %d documents (%d passages) at fraction %.3f",
        sum(draws.values()),
        len(draws),
        len(kept),
        fraction,
    )
    return PassageCollection.from_passages(kept)


class PairRecord(BaseModel):
    question: str
    passage_id: str
    source: Source
    masked: bool = False
    positive: Optional[str] = None


def write_pairs(pairs: Iterable[TrainingPair], path: str | Path) -> int:
    """
    Writes one JSON line per pair; masked and QA pairs keep their positive text.

    Returns:
        int: Number of pairs written.
    """
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for pair in pairs:
            record = PairRecord(
                question=" ".join(pair.question_tokens),
                passage_id=pair.passage_id,
                source=pair.source,
                masked=pair.masked,
                positive=None if pair.positive_tokens is None else " ".join(pair.positive_tokens),
            )
            f.write(record.model_dump_json(exclude_defaults=True) + "\n")
            count += 1
    return count


def read_pairs(path: str | Path) -> list[TrainingPair]:
    """
    Reads a pairs file written by write_pairs.

    Raises:
        InputFormatError: On a missing file or a bad record, naming the line.
    """
    pairs = []
    for line_no, record in _enumerate_jsonl(path, PairRecord):
        tokens = tokenize(record.question)
        if not tokens:
            raise InputFormatError("question has no tokens", path=str(path), line=line_no)
        pairs.append(
            TrainingPair(
                question_tokens=tokens,
                passage_id=record.passage_id,
                source=record.source,
                masked=record.masked,
                positive_tokens=None if record.positive is None else tokenize(record.positive),
            )
        )
    return pairs


def _enumerate_jsonl(path: str | Path, record_type: type[BaseModel]):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise InputFormatError(f"cannot read file: {e}", path=str(path), line=0)
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield line_no, record_type.model_validate_json(line)
        except ValidationError as e:
            raise InputFormatError(
                f"malformed record: {e.errors()[0]['msg']}", path=str(path), line=line_no
            )


def _read_jsonl(path: str | Path, record_type: type[BaseModel]):
    return [record for _, record in _enumerate_jsonl(path, record_type)]


class QaRecord(BaseModel):
    question: str
    passage: str
    title: Optional[str] = None
    id: Optional[str] = None


def read_qa_pairs(path: str | Path) -> list[TrainingPair]:
    """
    Reads general-domain question answering data as training pairs.

    Each JSON line holds {"question", "passage"} and optionally "title" and
    "id". The passages are not part of any collection, so every pair carries
    its own positive tokens; a record without id is named "qa-<line>".

    Args:
        path (str | Path): JSON-lines file of QA records.

    Returns:
        list[TrainingPair]: One QA pair per record, in file order.

    Raises:
        InputFormatError: On a missing file, a bad record, or a question or passage without tokens, naming the line.
    """
    pairs = []
    for line_no, record in _enumerate_jsonl(path, QaRecord):
        question = tokenize(record.question)
        positive = tokenize(f"{record.title or ''} {record.passage}")
        if not question or not positive:
            raise InputFormatError("question and passage need tokens", path=str(path), line=line_no)
        pairs.append(
            TrainingPair(
                question_tokens=question,
                passage_id=record.id or f"qa-{line_no}",
                source=Source.QA,
                positive_tokens=positive,
            )
        )
    return pairs
