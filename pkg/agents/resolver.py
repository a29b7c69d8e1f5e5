"""
resolver.py
-----------
Decision rules that turn per-passage entailment scores into an answer set,
and exam scoring with tie credit.

  ai2        pool the evidence of all choices, keep the top-j rows by
             retrieval score, score each choice by its best retained
             entailment (0 when none of its rows survive)
  maxentail  keep the top-k rows of each choice independently, score each
             choice by its best retained entailment (0 without evidence)

Retention order is (retrieval score desc, doc id asc, label asc). Every
choice tied at the maximum score is selected; a question answered with a
tie of size n earns 1/n when the gold label is among them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.stats import ttest_rel

from backend.errors import ConfigurationError, DataError, ParseError, ScoringError
from backend.schemas import PredictionRecord, RuleComparison, RuleName

logger = logging.getLogger(__name__)

AI2_DEFAULT_DEPTH = 8


@dataclass(frozen=True)
class Evidence:
    choice_label: str
    passage_doc_id: int
    retrieval_score: float
    entail_prob: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.entail_prob <= 1.0:
            raise ValueError(f"entail_prob {self.entail_prob} outside [0, 1]")


@dataclass(frozen=True)
class DecisionOutcome:
    selected: tuple
    per_choice_score: Dict[str, float]
    no_evidence: bool = False
    retained: tuple = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if not self.selected:
            raise ValueError("a decision must select at least one choice")
        unknown = set(self.selected) - set(self.per_choice_score)
        if unknown:
            raise ValueError(f"selected labels {sorted(unknown)} have no score")


def _retention_key(ev: Evidence):
    return (-ev.retrieval_score, ev.passage_doc_id, ev.choice_label)


def _decide(retained: Sequence[Evidence], all_labels: Sequence[str],
            no_evidence: bool) -> DecisionOutcome:
    scores = {label: 0.0 for label in all_labels}
    for ev in retained:
        if ev.choice_label not in scores:
            raise DataError(f"evidence for unknown choice {ev.choice_label!r}")
        scores[ev.choice_label] = max(scores[ev.choice_label], ev.entail_prob)
    best = max(scores.values())
    selected = tuple(label for label in all_labels if scores[label] == best)
    return DecisionOutcome(selected=selected, per_choice_score=scores,
                           no_evidence=no_evidence, retained=tuple(retained))


def ai2_rule(evidence: Sequence[Evidence], all_labels: Sequence[str],
             j: int = AI2_DEFAULT_DEPTH) -> DecisionOutcome:
    if j < 1:
        raise ConfigurationError(f"j must be >= 1, got {j}")
    retained = sorted(evidence, key=_retention_key)[:j]
    return _decide(retained, all_labels, no_evidence=not evidence)


def maxentail_topk(evidence: Sequence[Evidence], all_labels: Sequence[str], k: int) -> DecisionOutcome:
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    by_choice: Dict[str, List[Evidence]] = {}
    for ev in evidence:
        by_choice.setdefault(ev.choice_label, []).append(ev)
    retained = [ev for rows in by_choice.values() for ev in sorted(rows, key=_retention_key)[:k]]
    return _decide(retained, all_labels, no_evidence=not evidence)


def apply_rule(rule: Union[str, RuleName], evidence: Sequence[Evidence],
               all_labels: Sequence[str], depth: int) -> DecisionOutcome:
    rule = RuleName(rule)
    if rule is RuleName.AI2:
        return ai2_rule(evidence, all_labels, depth)
    return maxentail_topk(evidence, all_labels, depth)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def question_credit(outcome: DecisionOutcome, gold: str) -> float:
    return 1.0 / len(outcome.selected) if gold in outcome.selected else 0.0


def exam_credits(outcomes: Mapping[str, DecisionOutcome], gold: Mapping[str, str]) -> Dict[str, float]:
    missing = [qid for qid in gold if qid not in outcomes]
    if missing:
        raise ScoringError(missing)
    return {qid: question_credit(outcomes[qid], label) for qid, label in gold.items()}


def score_exam(outcomes: Mapping[str, DecisionOutcome], gold: Mapping[str, str]) -> float:
    credits = exam_credits(outcomes, gold)
    if not credits:
        return 0.0
    return float(np.mean(list(credits.values())))


def sweep_depths(
    evidence_by_question: Mapping[str, Sequence[Evidence]],
    labels_by_question: Mapping[str, Sequence[str]],
    gold: Mapping[str, str],
    rule: Union[str, RuleName],
    depths: Iterable[int],
) -> Dict[int, float]:
    """Accuracy of *rule* at every depth, evidence fixed."""
    accuracies: Dict[int, float] = {}
    for depth in depths:
        outcomes = {qid: apply_rule(rule, evidence_by_question.get(qid, ()), labels, depth)
                    for qid, labels in labels_by_question.items()}
        accuracies[depth] = score_exam(outcomes, gold)
        logger.debug("%s depth=%d accuracy=%.4f", RuleName(rule).value, depth, accuracies[depth])
    return accuracies


def compare_rules(credits_a: Mapping[str, float], credits_b: Mapping[str, float]) -> RuleComparison:
    """Paired t-test over per-question credits of two runs on the same questions."""
    frame = pd.DataFrame({"a": pd.Series(credits_a, dtype=float), "b": pd.Series(credits_b, dtype=float)})
    unpaired = frame.index[frame.isna().any(axis=1)].tolist()
    if unpaired:
        raise ScoringError(unpaired)
    if len(frame) < 2:
        raise DataError("a paired comparison needs at least two questions")
    diff = frame["a"] - frame["b"]
    if np.allclose(diff.to_numpy(), diff.iloc[0]):
        # constant difference: the t statistic is undefined
        t_stat = 0.0 if diff.iloc[0] == 0 else float(np.sign(diff.iloc[0]) * np.inf)
        p_value = 1.0 if diff.iloc[0] == 0 else 0.0
    else:
        result = ttest_rel(frame["a"], frame["b"])
        t_stat, p_value = float(result.statistic), float(result.pvalue)
    return RuleComparison(t_statistic=t_stat, p_value=p_value,
                          mean_difference=float(diff.mean()), questions=len(frame))


# ---------------------------------------------------------------------------
# Predictions file
# ---------------------------------------------------------------------------

def outcome_to_record(question_id: str, outcome: DecisionOutcome) -> PredictionRecord:
    return PredictionRecord(id=question_id, selected=list(outcome.selected),
                            scores=dict(outcome.per_choice_score), no_evidence=outcome.no_evidence)


def write_predictions(path: Union[str, Path], outcomes: Mapping[str, DecisionOutcome]) -> Path:
    """One JSON line per question, in the mapping's order."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as f:
        for qid, outcome in outcomes.items():
            f.write(outcome_to_record(qid, outcome).model_dump_json() + "\n")
    logger.info("Wrote %d predictions → %s", len(outcomes), target)
    return target


def read_predictions(path: Union[str, Path]) -> Dict[str, DecisionOutcome]:
    outcomes: Dict[str, DecisionOutcome] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = PredictionRecord.model_validate(json.loads(line))
                outcomes[record.id] = DecisionOutcome(selected=tuple(record.selected),
                                                      per_choice_score=dict(record.scores),
                                                      no_evidence=record.no_evidence)
            except (json.JSONDecodeError, ValidationError, ValueError) as exc:
                raise ParseError(str(exc), path=str(path), line=line_no) from exc
    return outcomes
