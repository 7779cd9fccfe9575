import argparse
import logging
import os
import sys
from typing import Callable, Optional, Sequence

import project.build_index_service
import project.evaluate_run_service
import project.generate_data_service
import project.ingest_corpus_service
import project.search_index_service
import project.train_encoder_service
from project.errors import FirstStageError

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "FIRST_STAGE_LOG_LEVEL"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def cmd_ingest(args: argparse.Namespace) -> None:
    """
    Chunks a corpus into a passage collection.
    """
    res = project.ingest_corpus_service.ingest_corpus(
        args.corpus_path, args.out_path, max_tokens=args.max_tokens
    )
    print(f"passages: {res.passage_count}")
    print(f"tokens: {res.token_count}")


def cmd_gendata(args: argparse.Namespace) -> None:
    """
    Generates synthetic training pairs from a collection.
    """
    res = project.generate_data_service.generate_data(
        args.collection,
        args.method,
        args.out_path,
        external=args.external,
        fraction=args.fraction,
        seed=args.seed,
        ict_max_sentences=args.max_sentences,
        ict_mask_rate=args.mask_rate,
        ngram_n=args.ngram_n,
        ngram_stride=args.ngram_stride,
        salient_top_k=args.salient_top_k,
        show_progress=args.progress,
    )
    print(f"passages: {res.passage_count}")
    print(f"pairs: {res.pair_count}")
    for source, count in res.pairs_by_source.items():
        print(f"pairs[{source}]: {count}")
    if res.mask_fraction is not None:
        print(f"mask fraction: {res.mask_fraction:.4f}")


def cmd_train(args: argparse.Namespace) -> None:
    """
    Trains the dual encoder on a pairs file.
    """
    res = project.train_encoder_service.train_encoder(
        args.pairs,
        args.collection,
        args.out_checkpoint,
        dim=args.dim,
        batch_size=args.batch,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        buckets=args.buckets,
        init_scale=args.init_scale,
        show_progress=args.progress,
    )
    for epoch, loss in enumerate(res.epoch_losses, start=1):
        print(f"epoch {epoch} loss: {loss:.6f}")
    if res.final_loss is not None:
        print(f"final loss: {res.final_loss:.6f}")


def cmd_index(args: argparse.Namespace) -> None:
    """
    Builds a hybrid index from a collection and an optional encoder.
    """
    res = project.build_index_service.build_index(
        args.collection,
        args.out_index,
        model_path=args.model,
        shards=args.shards,
        show_progress=args.progress,
    )
    print(f"passages: {res.passage_count}")
    print(f"shards: {res.shards}")
    print(f"dense dim: {res.dim}")


def cmd_search(args: argparse.Namespace) -> None:
    """
    Searches a query file against an index and writes a TREC run.
    """
    res = project.search_index_service.search_index(
        args.index,
        args.queries_path,
        args.out_run,
        model_path=args.model,
        lam=args.lam,
        k=args.k,
        tag=args.tag,
        show_progress=args.progress,
    )
    print(f"queries: {res.query_count}")
    print(f"hits: {res.hit_count}")


def cmd_eval(args: argparse.Namespace) -> None:
    """
    Evaluates a run against qrels, optionally testing it against a second run.
    """
    res = project.evaluate_run_service.evaluate_run(
        args.run,
        args.qrels,
        map_cutoff=args.map_cutoff,
        compare=args.compare,
        perm_rounds=args.perm_rounds,
        seed=args.seed,
        report_path=args.report,
    )
    report = res.report
    print(f"run: {report.run_tag}")
    print(f"queries: {report.evaluated}")
    if report.skipped_unjudged:
        print(f"skipped (not in qrels): {len(report.skipped_unjudged)}")
    if report.skipped_no_relevant:
        print(f"skipped (no relevant): {len(report.skipped_no_relevant)}")
    labels = {
        "map": f"MAP@{report.config.map_cutoff}",
        "p_10": f"P@{report.config.k}",
        "ndcg_10": f"nDCG@{report.config.k}",
        "mrr": "MRR",
        "p_1": "P@1",
    }
    means = report.means.model_dump()
    for metric, label in labels.items():
        print(f"{label}: {means[metric]:.4f}")
    for comparison in res.comparisons:
        mark = " *" if comparison.significant else ""
        print(
            f"{labels[comparison.metric]} vs {res.compared_with}: "
            f"{comparison.mean_a:.4f} / {comparison.mean_b:.4f} p={comparison.p_value:.4f}{mark}"
        )


def _env_log_level() -> Optional[str]:
    """
    The level named by the environment, or None when unset or not a known level.
    """
    value = os.environ.get(LOG_LEVEL_ENV, "").strip().upper()
    return value if value in LOG_LEVELS else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="first-stage",
        description="Zero-shot first-stage passage retrieval: BM25, a trained dual encoder and their hybrid.",
    )
    parser.add_argument(
        "--log-level",
        default=_env_log_level() or "WARNING",
        type=str.upper,
        choices=LOG_LEVELS,
        help=f"diagnostic verbosity (default from ${LOG_LEVEL_ENV}, else WARNING)",
    )
    parser.add_argument("--progress", action="store_true", help="show progress bars on stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="chunk a JSON-lines corpus into passages")
    ingest.add_argument("corpus_path")
    ingest.add_argument("out_path")
    ingest.add_argument("--max-tokens", type=int, default=200)
    ingest.set_defaults(handler=cmd_ingest)

    gendata = commands.add_parser("gendata", help="generate synthetic training pairs")
    gendata.add_argument("collection")
    gendata.add_argument("out_path")
    gendata.add_argument("--method", required=True, help="ict, ngram, qgen or qa")
    gendata.add_argument("--external", default=None, help="externally generated questions (qgen) or general-domain QA pairs (qa)")
    gendata.add_argument("--fraction", type=float, default=1.0)
    gendata.add_argument("--seed", type=int, default=0)
    gendata.add_argument("--max-sentences", type=int, default=5)
    gendata.add_argument("--mask-rate", type=float, default=0.9)
    gendata.add_argument("--ngram-n", type=int, default=16)
    gendata.add_argument("--ngram-stride", type=int, default=8)
    gendata.add_argument("--salient-top-k", type=int, default=5)
    gendata.set_defaults(handler=cmd_gendata)

    train = commands.add_parser("train", help="train the dual encoder")
    train.add_argument("pairs")
    train.add_argument("collection")
    train.add_argument("out_checkpoint")
    train.add_argument("--dim", type=int, default=64)
    train.add_argument("--batch", type=int, default=64)
    train.add_argument("--lr", type=float, default=0.05)
    train.add_argument("--epochs", type=int, default=1)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--buckets", type=int, default=2**18)
    train.add_argument("--init-scale", type=float, default=0.05)
    train.set_defaults(handler=cmd_train)

    index = commands.add_parser("index", help="build a hybrid index")
    index.add_argument("collection")
    index.add_argument("out_index")
    index.add_argument("--model", default=None, help="encoder checkpoint; omit for a sparse-only index")
    index.add_argument("--shards", type=int, default=4)
    index.set_defaults(handler=cmd_index)

    search = commands.add_parser("search", help="search a query file and write a TREC run")
    search.add_argument("index")
    search.add_argument("queries_path")
    search.add_argument("out_run")
    search.add_argument("--model", default=None)
    search.add_argument("--lambda", dest="lam", type=float, default=1.0)
    search.add_argument("--k", type=int, default=100)
    search.add_argument("--tag", default="hybrid")
    search.set_defaults(handler=cmd_search)

    evaluate = commands.add_parser("eval", help="evaluate a TREC run")
    evaluate.add_argument("run")
    evaluate.add_argument("qrels")
    evaluate.add_argument("--map-cutoff", type=int, default=100)
    evaluate.add_argument("--compare", default=None, help="second run for permutation tests")
    evaluate.add_argument("--perm-rounds", type=int, default=10_000)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--report", default=None, help="write the full report as JSON")
    evaluate.set_defaults(handler=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if os.environ.get(LOG_LEVEL_ENV, "").strip() and _env_log_level() is None:
        logger.warning(
            "Ignoring %s=%r; expected one of %s", LOG_LEVEL_ENV, os.environ[LOG_LEVEL_ENV], ", ".join(LOG_LEVELS)
        )
    handler: Callable[[argparse.Namespace], None] = args.handler
    try:
        handler(args)
    except FirstStageError as e:
        logger.error("error: %s", e.detail)
        return e.exit_code
    except Exception:
        logger.exception("Error processing command")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
