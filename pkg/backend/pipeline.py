"""
pipeline.py
-----------
End-to-end orchestration for one exam:

    question → select_terms → build_queries → search (k_retrieve per query)
             → build_hypotheses → score_evidence per (passage, choice)
             → decision rule → DecisionOutcome

Questions are independent. `QAPipeline.answer_all` runs them on worker
threads and returns results in input order. Index and models are
read-only after loading, so they are shared across workers.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Union

from agents.corpus_index import Index, RetrievalResult, load_index, search
from agents.entailment import EntailmentScorer, LexicalScorer, MatchLstmScorer, load_entailment, score_evidence
from agents.qa_dataset import gold_answers, parse_questions
from agents.question_model import build_hypotheses, build_queries
from agents.resolver import (DecisionOutcome, Evidence, apply_rule, exam_credits, read_predictions,
                             sweep_depths, write_predictions)
from agents.rewriter import PassthroughSelector, load_tagger
from backend.cache import RetrievalCache
from backend.errors import DataError
from backend.mappers import trace_to_record
from backend.schemas import EvalReport, PipelineConfig, Question, ScorerName, SweepReport

logger = logging.getLogger(__name__)


class TermSelector(Protocol):
    def select(self, stem: str) -> List[str]: ...


@dataclass
class Components:
    """Loaded artifacts a run needs."""

    index: Index
    selector: TermSelector
    scorer: EntailmentScorer
    cache: Optional[RetrievalCache] = None

    def retrieve(self, query: str, k: int) -> List[RetrievalResult]:
        if self.cache is not None:
            return self.cache.search(self.index, query, k)
        return search(self.index, query, k)


@dataclass(frozen=True)
class QuestionTrace:
    question_id: str
    selected_terms: List[str]
    queries: Dict[str, str]
    retrieved: Dict[str, List[RetrievalResult]]
    evidence: List[Evidence]
    outcome: DecisionOutcome
    context_prefix: str = ""

    @property
    def no_evidence(self) -> bool:
        return self.outcome.no_evidence


def load_components(config: PipelineConfig) -> Components:
    config.validate_paths()
    index = load_index(config.index_path)
    selector: TermSelector = PassthroughSelector() if config.tagger_path is None else load_tagger(config.tagger_path)
    if config.scorer is ScorerName.MLSTM:
        scorer: EntailmentScorer = MatchLstmScorer(load_entailment(config.entail_model_path))
    else:
        scorer = LexicalScorer()
    cache = RetrievalCache(config.cache_dir) if config.cache_dir is not None else None
    logger.info("Components ready: %d docs, selector=%s, scorer=%s, cache=%s",
                index.doc_count, getattr(selector, "variant", "tagger"), scorer.name,
                config.cache_dir or "off")
    return Components(index=index, selector=selector, scorer=scorer, cache=cache)


# ---------------------------------------------------------------------------
# One question
# ---------------------------------------------------------------------------

def collect_evidence(question: Question, config: PipelineConfig, components: Components,
                     fetch_depth: Optional[int] = None):
    """Everything up to the decision rule: (terms, queries, retrieved, evidence, context)."""
    k_retrieve = fetch_depth or config.fetch_depth
    terms = components.selector.select(question.stem)
    bundle = build_queries(question, terms)
    hypotheses = build_hypotheses(question, split=config.split)

    retrieved: Dict[str, List[RetrievalResult]] = {}
    evidence: List[Evidence] = []
    for label, query in bundle.per_choice_queries.items():
        results = components.retrieve(query, k_retrieve)
        retrieved[label] = results
        hypothesis = hypotheses.hypotheses[label]
        for r in results:
            premise = components.index.document(r.doc_id).text
            score = score_evidence(components.scorer, premise, hypotheses.context_prefix, hypothesis)
            evidence.append(Evidence(choice_label=label, passage_doc_id=r.doc_id,
                                     retrieval_score=r.score, entail_prob=score.p_entails))
    return bundle, retrieved, evidence, hypotheses.context_prefix


def answer_question(question: Question, config: PipelineConfig, components: Components) -> QuestionTrace:
    bundle, retrieved, evidence, context = collect_evidence(question, config, components)
    outcome = apply_rule(config.rule, evidence, question.labels, config.depth)
    if outcome.no_evidence:
        logger.warning("Question %s: no passage retrieved for any choice.", question.id)
    return QuestionTrace(question_id=question.id, selected_terms=bundle.selected_terms,
                         queries=bundle.per_choice_queries, retrieved=retrieved,
                         evidence=evidence, outcome=outcome, context_prefix=context)


# ---------------------------------------------------------------------------
# Many questions
# ---------------------------------------------------------------------------

class QAPipeline:
    """
    Usage
    -----
    pipeline = QAPipeline(config)             # loads index and models once
    traces   = pipeline.run(questions)        # same order as `questions`
    """

    def __init__(self, config: PipelineConfig, components: Optional[Components] = None) -> None:
        self.config = config
        self.components = components or load_components(config)

    async def answer_all(self, questions: Sequence[Question]) -> List[QuestionTrace]:
        limit = asyncio.Semaphore(self.config.workers)

        async def _one(question: Question) -> QuestionTrace:
            async with limit:
                return await asyncio.to_thread(answer_question, question, self.config, self.components)

        return list(await asyncio.gather(*(_one(q) for q in questions)))

    def run(self, questions: Sequence[Question]) -> List[QuestionTrace]:
        return asyncio.run(self.answer_all(questions))


def outcomes_of(traces: Sequence[QuestionTrace]) -> Dict[str, DecisionOutcome]:
    return {t.question_id: t.outcome for t in traces}


def write_traces(path: Union[str, Path], traces: Sequence[QuestionTrace]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as f:
        for trace in traces:
            f.write(trace_to_record(trace).model_dump_json() + "\n")
    return target


def _require_gold(questions: Sequence[Question]) -> Dict[str, str]:
    gold = gold_answers(questions)
    missing = [q.id for q in questions if q.id not in gold]
    if missing:
        raise DataError(f"{len(missing)} question(s) have no answer key: {', '.join(missing[:10])}")
    return gold


def answer_file(questions_file: Union[str, Path], config: PipelineConfig,
                out: Union[str, Path], trace_path: Optional[Union[str, Path]] = None,
                components: Optional[Components] = None) -> List[QuestionTrace]:
    questions = parse_questions(questions_file)
    traces = QAPipeline(config, components).run(questions)
    write_predictions(out, outcomes_of(traces))
    if trace_path is not None:
        write_traces(trace_path, traces)
    return traces


def run_eval(questions_file: Union[str, Path], config: PipelineConfig,
             components: Optional[Components] = None,
             trace_path: Optional[Union[str, Path]] = None) -> EvalReport:
    started = time.perf_counter()
    questions = parse_questions(questions_file)
    gold = _require_gold(questions)
    traces = QAPipeline(config, components).run(questions)
    if trace_path is not None:
        write_traces(trace_path, traces)
    credits = exam_credits(outcomes_of(traces), gold)
    accuracy = sum(credits.values()) / len(credits) if credits else 0.0
    report = EvalReport(accuracy=accuracy, questions=len(credits), credits=credits,
                        timing_seconds=time.perf_counter() - started, config=config.snapshot())
    logger.info("Accuracy %.4f over %d questions", report.accuracy, report.questions)
    return report


def evaluate_predictions(predictions_file: Union[str, Path], gold_file: Union[str, Path]) -> EvalReport:
    started = time.perf_counter()
    gold = _require_gold(parse_questions(gold_file))
    credits = exam_credits(read_predictions(predictions_file), gold)
    accuracy = sum(credits.values()) / len(credits) if credits else 0.0
    return EvalReport(accuracy=accuracy, questions=len(credits), credits=credits,
                      timing_seconds=time.perf_counter() - started)


def run_sweep(questions_file: Union[str, Path], config: PipelineConfig, depths: Sequence[int],
              components: Optional[Components] = None) -> SweepReport:
    """Retrieve and score once at the deepest setting, then re-apply the rule per depth."""
    depths = sorted(set(depths))
    if not depths or depths[0] < 1:
        raise DataError(f"depths must be positive integers, got {depths}")
    questions = parse_questions(questions_file)
    gold = _require_gold(questions)
    components = components or load_components(config)
    fetch = max(config.fetch_depth, 2 * depths[-1])
    evidence = {q.id: collect_evidence(q, config, components, fetch_depth=fetch)[2] for q in questions}
    labels = {q.id: q.labels for q in questions}
    accuracies = sweep_depths(evidence, labels, gold, config.rule, depths)
    return SweepReport(rule=config.rule, accuracies=accuracies)
