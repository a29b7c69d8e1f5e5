"""
mappers.py
----------
Converts the pipeline's internal dataclasses into the pydantic records of
backend/schemas.py, so the algorithms never depend on the file formats.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Dict, List, TYPE_CHECKING

from agents.corpus_index import RetrievalResult
from backend.schemas import QuestionTraceRecord, RetrievedPassage

if TYPE_CHECKING:
    from backend.pipeline import QuestionTrace


def passages(results: List[RetrievalResult]) -> List[RetrievedPassage]:
    return [RetrievedPassage(doc_id=r.doc_id, score=r.score, rank=r.rank) for r in results]


def trace_to_record(trace: "QuestionTrace") -> QuestionTraceRecord:
    """
    Flatten a QuestionTrace for `answer --trace`.

    Evidence rows keep their field names (choice_label, passage_doc_id,
    retrieval_score, entail_prob); retrieved passages are keyed by label.
    """
    retrieved: Dict[str, List[RetrievedPassage]] = {
        label: passages(results) for label, results in trace.retrieved.items()
    }
    return QuestionTraceRecord(
        id=trace.question_id,
        selected_terms=list(trace.selected_terms),
        queries=dict(trace.queries),
        retrieved=retrieved,
        evidence=[asdict(ev) for ev in trace.evidence],
        selected=list(trace.outcome.selected),
        scores=dict(trace.outcome.per_choice_score),
        no_evidence=trace.outcome.no_evidence,
    )
