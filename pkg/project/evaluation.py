import logging
import math
from collections import Counter
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from project.errors import ConfigError, DuplicateIdError, InputFormatError

logger = logging.getLogger(__name__)

Qrels = dict[str, dict[str, int]]

METRICS = ("map", "p_10", "ndcg_10", "mrr", "p_1")


class RunFile(BaseModel):
    """
    Ranked results per query, best first, and the tag that names the run.
    """

    tag: str = "run"
    rankings: dict[str, list[tuple[str, float]]] = Field(default_factory=dict)

    def ranked_ids(self, query_id: str) -> list[str]:
        return [pid for pid, _ in self.rankings.get(query_id, [])]


class EvalConfig(BaseModel):
    map_cutoff: int = Field(default=100, ge=1)
    k: int = Field(default=10, ge=1)


class QueryMetrics(BaseModel):
    map: float
    p_10: float
    ndcg_10: float
    mrr: float
    p_1: float


class EvalReport(BaseModel):
    """
    Mean and per-query metrics of a run.

    Only queries that appear in the run and have at least one relevant
    passage in the qrels are evaluated; the others are listed.
    """

    run_tag: str
    config: EvalConfig
    evaluated: int
    means: QueryMetrics
    per_query: dict[str, QueryMetrics]
    skipped_unjudged: list[str] = Field(default_factory=list)
    skipped_no_relevant: list[str] = Field(default_factory=list)


class MetricComparison(BaseModel):
    metric: str
    mean_a: float
    mean_b: float
    p_value: float
    significant: bool


def _relevant(qrels_q: dict[str, int]) -> set[str]:
    return {pid for pid, grade in qrels_q.items() if grade > 0}


def average_precision(
    run_q: Sequence[str], qrels_q: dict[str, int], cutoff: Optional[int] = None
) -> float:
    """
    Average precision over the first cutoff results.

    The denominator is every relevant passage in the qrels, retrieved or not.
    A query without relevant passages scores 0; callers exclude it.
    """
    relevant = _relevant(qrels_q)
    if not relevant:
        return 0.0
    ranked = run_q if cutoff is None else run_q[:cutoff]
    hits = 0
    total = 0.0
    for rank, pid in enumerate(ranked, start=1):
        if pid in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def precision_at(run_q: Sequence[str], qrels_q: dict[str, int], k: int) -> float:
    """
    Share of the first k results that are relevant; missing ranks count as misses.
    """
    relevant = _relevant(qrels_q)
    return sum(1 for pid in run_q[:k] if pid in relevant) / k


def ndcg_at(run_q: Sequence[str], qrels_q: dict[str, int], k: int) -> float:
    """
    nDCG with linear gain and log2(rank + 1) discount.
    """
    ideal_grades = sorted((g for g in qrels_q.values() if g > 0), reverse=True)[:k]
    if not ideal_grades:
        return 0.0
    ideal = sum(g / math.log2(i + 2) for i, g in enumerate(ideal_grades))
    dcg = sum(
        max(qrels_q.get(pid, 0), 0) / math.log2(i + 2) for i, pid in enumerate(run_q[:k])
    )
    return dcg / ideal


def reciprocal_rank(run_q: Sequence[str], qrels_q: dict[str, int]) -> float:
    relevant = _relevant(qrels_q)
    for rank, pid in enumerate(run_q, start=1):
        if pid in relevant:
            return 1.0 / rank
    return 0.0


def mrr(run: RunFile, qrels: Qrels) -> float:
    """
    Mean reciprocal rank over the run queries that have relevant passages.
    """
    values = [
        reciprocal_rank(run.ranked_ids(qid), qrels[qid])
        for qid in run.rankings
        if qid in qrels and _relevant(qrels[qid])
    ]
    return float(np.mean(values)) if values else 0.0


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: float, candidate_total: int, reference_total: int) -> float:
    if candidate_total == 0 or reference_total == 0 or overlap == 0:
        return 0.0
    precision = overlap / candidate_total
    recall = overlap / reference_total
    return 2 * precision * recall / (precision + recall)


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> float:
    """
    Clipped n-gram overlap F1 between a candidate and a reference.
    """
    if n < 1:
        raise ConfigError(f"n must be at least 1, got {n}")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b):
            current.append(previous[j] + 1 if x == y else max(previous[j + 1], current[j]))
        previous = current
    return previous[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    return _f1(_lcs_length(candidate, reference), len(candidate), len(reference))


def permutation_test(
    per_query_a: Sequence[float],
    per_query_b: Sequence[float],
    rounds: int = 10_000,
    seed: int = 0,
) -> float:
    """
    Paired two-sided randomization test on the mean per-query difference.

    Each round flips the sign of every paired difference with probability 1/2.
    The p-value is (1 + rounds at least as extreme as observed) / (rounds + 1).

    Raises:
        ConfigError: On unequal or empty inputs, or rounds < 1.
    """
    a = np.asarray(per_query_a, dtype=np.float64)
    b = np.asarray(per_query_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ConfigError("permutation test needs at least one paired value")
    if rounds < 1:
        raise ConfigError(f"rounds must be positive, got {rounds}")

    diff = a - b
    observed = abs(diff.mean())
    tolerance = 1e-12 * max(1.0, observed)
    rng = np.random.default_rng(seed)
    extreme = 0
    block = max(1, min(rounds, 1_000_000 // diff.size))
    done = 0
    while done < rounds:
        size = min(block, rounds - done)
        signs = rng.integers(0, 2, size=(size, diff.size)) * 2 - 1
        stats = np.abs((signs * diff).mean(axis=1))
        extreme += int(np.count_nonzero(stats >= observed - tolerance))
        done += size
    return (1 + extreme) / (rounds + 1)


def evaluate_run(run: RunFile, qrels: Qrels, config: EvalConfig) -> EvalReport:
    """
    Per-query and mean MAP@N, P@10, nDCG@10, MRR and P@1.

    Run queries absent from the qrels, or without a relevant passage, are
    skipped with a warning and listed in the report.
    """
    per_query: dict[str, QueryMetrics] = {}
    unjudged = []
    no_relevant = []
    for qid in run.rankings:
        if qid not in qrels:
            unjudged.append(qid)
            continue
        qrels_q = qrels[qid]
        if not _relevant(qrels_q):
            no_relevant.append(qid)
            continue
        ranked = run.ranked_ids(qid)
        per_query[qid] = QueryMetrics(
            map=average_precision(ranked, qrels_q, config.map_cutoff),
            p_10=precision_at(ranked, qrels_q, config.k),
            ndcg_10=ndcg_at(ranked, qrels_q, config.k),
            mrr=reciprocal_rank(ranked, qrels_q),
            p_1=precision_at(ranked, qrels_q, 1),
        )
    if unjudged:
        logger.warning("Skipped %d run queries absent from the qrels", len(unjudged))
    if no_relevant:
        logger.warning("Skipped %d queries without relevant passages", len(no_relevant))
    if not per_query:
        logger.warning("No query of run %r could be evaluated", run.tag)

    means = QueryMetrics(
        **{
            metric: float(np.mean([getattr(m, metric) for m in per_query.values()]))
            if per_query
            else 0.0
            for metric in METRICS
        }
    )
    return EvalReport(
        run_tag=run.tag,
        config=config,
        evaluated=len(per_query),
        means=means,
        per_query=per_query,
        skipped_unjudged=unjudged,
        skipped_no_relevant=no_relevant,
    )


def compare_reports(
    report_a: EvalReport,
    report_b: EvalReport,
    rounds: int = 10_000,
    seed: int = 0,
    alpha: float = 0.05,
) -> list[MetricComparison]:
    """
    Permutation test per metric over the queries both reports evaluated.
    """
    shared = sorted(set(report_a.per_query) & set(report_b.per_query))
    if not shared:
        raise ConfigError("the two runs share no evaluated query")
    comparisons = []
    for metric in METRICS:
        a = [getattr(report_a.per_query[q], metric) for q in shared]
        b = [getattr(report_b.per_query[q], metric) for q in shared]
        p_value = permutation_test(a, b, rounds=rounds, seed=seed)
        comparisons.append(
            MetricComparison(
                metric=metric,
                mean_a=float(np.mean(a)),
                mean_b=float(np.mean(b)),
                p_value=p_value,
                significant=p_value < alpha,
            )
        )
    return comparisons


def read_qrels(path: str | Path) -> Qrels:
    """
    Reads TREC qrels lines "query_id 0 passage_id grade".

    Raises:
        InputFormatError: On a missing file or a malformed line, naming the line.
    """
    qrels: Qrels = {}
    for line_no, fields in _split_lines(path):
        if len(fields) != 4:
            raise InputFormatError(
                f"expected 4 fields, found {len(fields)}", path=str(path), line=line_no
            )
        qid, _, pid, grade = fields
        try:
            value = int(grade)
        except ValueError:
            raise InputFormatError(f"grade {grade!r} is not an integer", path=str(path), line=line_no)
        if value < 0:
            raise InputFormatError(f"grade {value} is negative", path=str(path), line=line_no)
        qrels.setdefault(qid, {})[pid] = value
    return qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid, judged in qrels.items():
            for pid, grade in judged.items():
                f.write(f"{qid} 0 {pid} {grade}\n")


def read_run(path: str | Path) -> RunFile:
    """
    Reads TREC run lines "query_id Q0 passage_id rank score run_tag".

    Results are ordered by descending score, then by the rank column.

    Raises:
        InputFormatError: On a missing file or a malformed line, naming the line.
        DuplicateIdError: When a passage appears twice for the same query.
    """
    rows: dict[str, list[tuple[float, int, str]]] = {}
    seen: dict[str, set[str]] = {}
    tag = None
    for line_no, fields in _split_lines(path):
        if len(fields) != 6:
            raise InputFormatError(
                f"expected 6 fields, found {len(fields)}", path=str(path), line=line_no
            )
        qid, _, pid, rank, score, run_tag = fields
        try:
            rank_value = int(rank)
            score_value = float(score)
        except ValueError:
            raise InputFormatError("rank or score is not numeric", path=str(path), line=line_no)
        if pid in seen.setdefault(qid, set()):
            raise DuplicateIdError(
                f"passage {pid!r} listed twice for query {qid!r}", path=str(path), line=line_no
            )
        seen[qid].add(pid)
        rows.setdefault(qid, []).append((score_value, rank_value, pid))
        tag = tag or run_tag
    rankings = {
        qid: [(pid, score) for score, _, pid in sorted(entries, key=lambda e: (-e[0], e[1]))]
        for qid, entries in rows.items()
    }
    return RunFile(tag=tag or "run", rankings=rankings)


def write_run(run: RunFile, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in format_run(run):
            f.write(line + "\n")


def format_run(run: RunFile) -> Iterable[str]:
    for qid, ranking in run.rankings.items():
        for rank, (pid, score) in enumerate(ranking, start=1):
            yield f"{qid} Q0 {pid} {rank} {score:.6f} {run.tag}"


def _split_lines(path: str | Path):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise InputFormatError(f"cannot read file: {e}", path=str(path), line=0)
    for line_no, line in enumerate(lines, start=1):
        fields = line.split()
        if fields:
            yield line_no, fields
