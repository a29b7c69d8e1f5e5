"""
question_model.py
-----------------
Turns a multiple-choice question into what the rest of the pipeline needs:

  build_queries      one retrieval query per choice: selected terms + choice text
  build_hypotheses   one fill-in-the-blank statement per choice

HYPOTHESIS RULES (first match wins)
===================================
  R1  blank marker (3+ underscores)  → replaced by the choice
  R2  leftmost wh-word               → replaced by the choice
  R3  otherwise                      → choice appended

A trailing '?' is always stripped. In split mode only the final sentence
becomes the hypothesis; the earlier sentences are returned as a context
prefix that is later prepended to every premise.

Sentence boundaries are '.', '?' or '!' followed by whitespace, so
abbreviations such as "e.g. water" split too.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from backend.schemas import Question

BLANK_RE = re.compile(r"_{3,}")
WH_RE = re.compile(r"\b(what|which|who|whom|whose|where|when|why|how)\b", re.IGNORECASE)
BOUNDARY_RE = re.compile(r"(?<=[.?!])\s+")


@dataclass(frozen=True)
class QueryBundle:
    question_id: str
    selected_terms: List[str]
    per_choice_queries: Dict[str, str]


@dataclass(frozen=True)
class HypothesisSet:
    hypotheses: Dict[str, str]
    context_prefix: str = ""

    def __len__(self) -> int:
        return len(self.hypotheses)


def split_question(stem: str) -> Tuple[str, str]:
    """(context, final_sentence); context is "" for a single sentence."""
    text = stem.strip()
    boundaries = list(BOUNDARY_RE.finditer(text))
    if not boundaries:
        return "", text
    last = boundaries[-1]
    return text[:last.start()], text[last.end():]


def _strip_question_mark(text: str) -> str:
    return text.rstrip().rstrip("?").rstrip()


def make_hypothesis(question_sentence: str, choice_text: str) -> str:
    sentence = _strip_question_mark(question_sentence)
    choice = choice_text.strip()
    if BLANK_RE.search(sentence):
        out = BLANK_RE.sub(lambda _: choice, sentence)
    elif WH_RE.search(sentence):
        out = WH_RE.sub(lambda _: choice, sentence, count=1)
    else:
        out = f"{sentence} {choice}"
    return _strip_question_mark(out)


def build_hypotheses(question: Question, split: bool = False) -> HypothesisSet:
    if split:
        context, sentence = split_question(question.stem)
    else:
        context, sentence = "", question.stem
    return HypothesisSet(
        hypotheses={c.label: make_hypothesis(sentence, c.text) for c in question.choices},
        context_prefix=context,
    )


def build_queries(question: Question, selected_terms: Sequence[str]) -> QueryBundle:
    terms = list(selected_terms)
    prefix = " ".join(terms)
    queries = {c.label: f"{prefix} {c.text}" if prefix else c.text for c in question.choices}
    return QueryBundle(question_id=question.id, selected_terms=terms, per_choice_queries=queries)
