import logging
from collections import Counter
from pathlib import Path
from typing import Optional

from pydantic import BaseModel
from tqdm import tqdm

from project import corpus, datagen
from project.errors import ConfigError, config_from
from project.manifest import build_manifest, write_sidecar

logger = logging.getLogger(__name__)

METHODS = ("ict", "ngram", "qgen", "qa")


class GenerateDataResponse(BaseModel):
    """
    Outcome of a data generation run, including per-source pair counts.
    """

    pair_count: int
    passage_count: int
    pairs_by_source: dict[str, int]
    mask_fraction: Optional[float] = None
    pairs_path: str


def generate_data(
    collection_path: str | Path,
    method: str,
    out_path: str | Path,
    external: Optional[str | Path] = None,
    fraction: float = 1.0,
    seed: int = 0,
    ict_max_sentences: int = 5,
    ict_mask_rate: float = 0.9,
    ngram_n: int = 16,
    ngram_stride: int = 8,
    salient_top_k: int = 5,
    show_progress: bool = False,
) -> GenerateDataResponse:
    """
    Subsamples the collection and writes synthetic (question, passage) pairs.

    Args:
        collection_path (str | Path): Collection written by ingest.
        method (str): One of "ict", "ngram", "qgen" or "qa".
        out_path (str | Path): Pairs file to write.
        external (Optional[str | Path]): For "qgen", a file of externally generated questions used instead of the built-in template generator; for "qa", the general-domain QA file to convert (required).
        fraction (float): Share of source documents kept, in (0, 1].
        seed (int): Seed for subsampling and sentence sampling.
        ict_max_sentences (int): Pseudo-queries drawn per passage for ICT.
        ict_mask_rate (float): Probability that an ICT query sentence is cut from its positive.
        ngram_n (int): Ngram window length.
        ngram_stride (int): Ngram window stride.
        salient_top_k (int): Salient sentences questioned per passage for QGen.
        show_progress (bool): Draw a progress bar on stderr.

    Returns:
        GenerateDataResponse: Pair counts and, for ICT, the realized mask fraction.

    Raises:
        ConfigError: On an unknown method, an external file with a method other than qgen or qa, qa without an external file or with a fraction below 1, or invalid generation settings.
        InputFormatError: If the collection or external file cannot be parsed.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose one of {', '.join(METHODS)}")
    if external is not None and method not in ("qgen", "qa"):
        raise ConfigError("--external only applies to --method=qgen or --method=qa")
    if method == "qa" and external is None:
        raise ConfigError("--method=qa needs the QA file as --external")
    if method == "qa" and fraction != 1.0:
        raise ConfigError("--fraction applies to collections, not to QA files")
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"--fraction must be in (0, 1], got {fraction}")
    cfg = config_from(
        datagen.GenConfig,
        ict_max_sentences=ict_max_sentences,
        ict_mask_rate=ict_mask_rate,
        ngram_n=ngram_n,
        ngram_stride=ngram_stride,
        salient_top_k=salient_top_k,
        seed=seed,
    )

    if method == "qa":
        return _convert_qa(external, out_path, cfg, show_progress)

    collection = datagen.subsample_corpus(corpus.load_collection(collection_path), fraction, seed)

    generator: Optional[datagen.QuestionGenerator] = None
    if method == "qgen":
        if external is not None:
            generator = datagen.ExternalQuestionGenerator.from_file(external)
            unknown = generator.unknown_passages(collection)
            if unknown:
                logger.warning(
                    "Ignoring questions for %d passages not in the collection", len(unknown)
                )
        else:
            generator = datagen.TemplateQuestionGenerator()

    pairs: list[datagen.TrainingPair] = []
    for passage in tqdm(collection.passages, desc="Generating", disable=not show_progress):
        if method == "ict":
            rng = datagen.passage_rng(cfg.seed, passage.id)
            pairs.extend(pair for pair, _ in datagen.gen_ict(passage, cfg, rng))
        elif method == "ngram":
            pairs.extend(datagen.gen_ngram(passage, cfg))
        else:
            pairs.extend(
                datagen.gen_questions(passage, collection.require_stats(), cfg, generator)
            )

    datagen.write_pairs(pairs, out_path)
    inputs = [collection_path] + ([external] if external is not None else [])
    manifest = build_manifest(
        "gendata",
        config={"method": method, "fraction": fraction, **cfg.model_dump(exclude={"seed"})},
        seeds={"seed": seed},
        inputs=inputs,
    )
    write_sidecar(manifest, out_path)

    by_source = Counter(pair.source.value for pair in pairs)
    mask_fraction = None
    if method == "ict" and pairs:
        mask_fraction = sum(pair.masked for pair in pairs) / len(pairs)
    logger.info("Generated %d %s pairs from %d passages", len(pairs), method, len(collection))
    return GenerateDataResponse(
        pair_count=len(pairs),
        passage_count=len(collection),
        pairs_by_source=dict(sorted(by_source.items())),
        mask_fraction=mask_fraction,
        pairs_path=str(out_path),
    )


def _convert_qa(
    qa_path: str | Path, out_path: str | Path, cfg: datagen.GenConfig, show_progress: bool
) -> GenerateDataResponse:
    pairs = datagen.read_qa_pairs(qa_path)
    datagen.write_pairs(tqdm(pairs, desc="Converting", disable=not show_progress), out_path)
    manifest = build_manifest(
        "gendata",
        config={"method": "qa", "fraction": 1.0, **cfg.model_dump(exclude={"seed"})},
        seeds={"seed": cfg.seed},
        inputs=[qa_path],
    )
    write_sidecar(manifest, out_path)
    logger.info("Converted %d general-domain QA pairs", len(pairs))
    return GenerateDataResponse(
        pair_count=len(pairs),
        passage_count=len(pairs),
        pairs_by_source={datagen.Source.QA.value: len(pairs)} if pairs else {},
        pairs_path=str(out_path),
    )
