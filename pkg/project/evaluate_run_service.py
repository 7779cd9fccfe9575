import logging
from pathlib import Path
from typing import Optional

from pydantic import BaseModel

from project import evaluation
from project.errors import config_from

logger = logging.getLogger(__name__)


class EvaluateRunResponse(BaseModel):
    """
    The metric report of a run and, when a second run was given, the significance of each difference.
    """

    report: evaluation.EvalReport
    compared_with: Optional[str] = None
    comparisons: list[evaluation.MetricComparison] = []


def evaluate_run(
    run_path: str | Path,
    qrels_path: str | Path,
    map_cutoff: int = 100,
    compare: Optional[str | Path] = None,
    perm_rounds: int = 10_000,
    seed: int = 0,
    report_path: Optional[str | Path] = None,
) -> EvaluateRunResponse:
    """
    Scores a TREC run against qrels, optionally testing it against a second run.

    Args:
        run_path (str | Path): Run to evaluate.
        qrels_path (str | Path): Relevance judgments.
        map_cutoff (int): Depth N of MAP; 100 for article collections, 1000 for forums.
        compare (Optional[str | Path]): Second run; each metric is tested with a paired permutation test.
        perm_rounds (int): Permutation rounds.
        seed (int): Seed of the permutation test.
        report_path (Optional[str | Path]): Where to write the full response as JSON.

    Returns:
        EvaluateRunResponse: Mean and per-query metrics, plus p-values when comparing.

    Raises:
        InputFormatError: If a file cannot be parsed; the message names the line.
    """
    config = config_from(evaluation.EvalConfig, map_cutoff=map_cutoff)
    qrels = evaluation.read_qrels(qrels_path)
    report = evaluation.evaluate_run(evaluation.read_run(run_path), qrels, config)
    response = EvaluateRunResponse(report=report)
    if compare is not None:
        other = evaluation.evaluate_run(evaluation.read_run(compare), qrels, config)
        response.compared_with = other.run_tag
        response.comparisons = evaluation.compare_reports(report, other, rounds=perm_rounds, seed=seed)
    if report_path is not None:
        Path(report_path).write_text(response.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return response
