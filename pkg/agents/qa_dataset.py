"""
qa_dataset.py
-------------
Loads every dataset the pipeline consumes.

  questions        ARC JSON-lines: id, question.stem, question.choices, answerKey
  essential terms  TSV `token_1 ... token_T<TAB>r_1 ... r_T`, ratings 1..5
  entailment pairs JSON-lines {premise, hypothesis, label}, label entails|neutral

Local files are the default. `load_arc_from_hub` / `load_scitail_from_hub`
pull the public releases through the HuggingFace `datasets` library
(network required; never used by the test suite).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ValidationError
from sklearn.model_selection import train_test_split

from agents.entailment import PremiseHypothesisPair
from agents.rewriter import EssentialTermsExample, binarize_ratings
from agents.text import norms, tokens_from_words
from backend.errors import DataError, ParseError
from backend.schemas import Choice, EntailmentLabel, Question

logger = logging.getLogger(__name__)

MIN_CHOICES, MAX_CHOICES = 2, 5
ARC_HUB_REPO = "allenai/ai2_arc"
SCITAIL_HUB_REPO = "allenai/scitail"


# ---------------------------------------------------------------------------
# Questions
# ---------------------------------------------------------------------------

def _require(record: Mapping, dotted: str):
    node = record
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            raise KeyError(dotted)
        node = node[part]
    return node


def question_from_record(record: Mapping) -> Question:
    """Build a Question from one ARC record; raises KeyError naming a missing field."""
    raw_choices = _require(record, "question.choices")
    choices = []
    for i, c in enumerate(raw_choices):
        if "label" not in c or "text" not in c:
            raise KeyError(f"question.choices[{i}].{'label' if 'label' not in c else 'text'}")
        choices.append(Choice(label=str(c["label"]), text=str(c["text"])))
    if not MIN_CHOICES <= len(choices) <= MAX_CHOICES:
        raise ValueError(f"{len(choices)} choices, expected {MIN_CHOICES}..{MAX_CHOICES}")
    return Question(id=str(_require(record, "id")), stem=str(_require(record, "question.stem")),
                    choices=choices, answer_key=record.get("answerKey"))


def parse_questions(path: Union[str, Path], lenient: bool = False) -> List[Question]:
    """
    One Question per non-blank line. Every malformed line is reported; with
    *lenient* they are logged and skipped instead of raising.
    """
    questions: List[Question] = []
    errors: List[ParseError] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                questions.append(question_from_record(json.loads(line)))
            except json.JSONDecodeError as exc:
                errors.append(ParseError(f"invalid JSON ({exc.msg})", path=str(path), line=line_no))
            except KeyError as exc:
                field = exc.args[0]
                errors.append(ParseError(f"missing required field '{field}'", path=str(path),
                                         line=line_no, field=field))
            except (ValidationError, ValueError, TypeError) as exc:
                errors.append(ParseError(str(exc).splitlines()[0] if str(exc) else repr(exc),
                                         path=str(path), line=line_no))
    if errors:
        if not lenient:
            if len(errors) == 1:
                raise errors[0]
            first = errors[0]
            raise ParseError(f"{len(errors)} malformed lines: " + "; ".join(str(e) for e in errors),
                             line=first.line, field=first.field)
        for err in errors:
            logger.warning("Skipping question: %s", err)
    ids = [q.id for q in questions]
    if len(set(ids)) != len(ids):
        logger.warning("%s: %d duplicate question ids", path, len(ids) - len(set(ids)))
    logger.info("Loaded %d questions from %s", len(questions), path)
    return questions


def gold_answers(questions: Iterable[Question]) -> dict:
    gold = {q.id: q.answer_key for q in questions if q.answer_key is not None}
    return gold


# ---------------------------------------------------------------------------
# Essential terms
# ---------------------------------------------------------------------------

def _parse_terms_line(line: str, path: str, line_no: int, threshold: int) -> EssentialTermsExample:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 2:
        raise ParseError("expected `tokens<TAB>ratings`", path=path, line=line_no)
    words, raw = parts[0].split(), parts[1].split()
    if not words:
        raise ParseError("no tokens", path=path, line=line_no, field="tokens")
    if len(words) != len(raw):
        raise ParseError(f"{len(words)} tokens but {len(raw)} ratings", path=path, line=line_no)
    try:
        ratings = [int(r) for r in raw]
        labels = binarize_ratings(ratings, threshold)
    except (ValueError, ParseError) as exc:
        raise ParseError(str(exc), path=path, line=line_no, field="ratings") from exc
    try:
        tokens, origin = tokens_from_words(words)
    except ValueError as exc:
        raise ParseError(str(exc), path=path, line=line_no, field="tokens") from exc
    # a word split into several tokens lends its rating to each of them
    return EssentialTermsExample(tokens=tokens, ratings=[ratings[i] for i in origin],
                                 labels=[labels[i] for i in origin])


def load_essential_terms(path: Union[str, Path], threshold: int = 3) -> List[EssentialTermsExample]:
    examples: List[EssentialTermsExample] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if line.strip():
                examples.append(_parse_terms_line(line, str(path), line_no, threshold))
    logger.info("Loaded %d essential-terms examples from %s", len(examples), path)
    return examples


def convert_pipe_annotated(path: Union[str, Path], out: Optional[Union[str, Path]] = None
                           ) -> List[Tuple[List[str], List[int]]]:
    """
    Convert `question<TAB>word|rating word|rating ...` lines into
    (words, ratings) pairs; with *out*, also write them in the TSV format.
    """
    rows: List[Tuple[List[str], List[int]]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            annotated = parts[-1].split()
            words, ratings = [], []
            for item in annotated:
                word, sep, rating = item.rpartition("|")
                if not sep or not word:
                    raise ParseError(f"expected word|rating, got {item!r}", path=str(path), line=line_no)
                try:
                    ratings.append(int(rating))
                except ValueError as exc:
                    raise ParseError(f"non-integer rating {rating!r}", path=str(path),
                                     line=line_no, field="rating") from exc
                words.append(word)
            if not words:
                raise ParseError("no annotated words", path=str(path), line=line_no)
            binarize_ratings(ratings)  # range check
            rows.append((words, ratings))
    if out is not None:
        target = Path(out)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            for words, ratings in rows:
                f.write(" ".join(words) + "\t" + " ".join(map(str, ratings)) + "\n")
        logger.info("Converted %d annotated questions → %s", len(rows), target)
    return rows


def split_essential_terms(
    examples: Sequence[EssentialTermsExample],
    exclude_stems: Iterable[str] = (),
    seed: int = 13,
) -> Tuple[List[EssentialTermsExample], List[EssentialTermsExample], List[EssentialTermsExample]]:
    """
    80/10/10 train/dev/test after dropping examples whose normalised token
    sequence equals that of one of *exclude_stems* (ARC dev/test questions).
    """
    excluded = {tuple(norms(s)) for s in exclude_stems}
    kept = [ex for ex in examples if tuple(t.norm for t in ex.tokens) not in excluded]
    if len(kept) != len(examples):
        logger.info("Dropped %d examples overlapping evaluation questions", len(examples) - len(kept))
    n_held = round(0.1 * len(kept))
    if n_held == 0:
        return list(kept), [], []
    train, held = train_test_split(list(kept), test_size=2 * n_held, random_state=seed, shuffle=True)
    dev, test = train_test_split(held, test_size=n_held, random_state=seed, shuffle=True)
    return list(train), list(dev), list(test)


# ---------------------------------------------------------------------------
# Entailment pairs
# ---------------------------------------------------------------------------

class EntailmentRecord(BaseModel):
    premise: str
    hypothesis: str
    label: Optional[EntailmentLabel] = None


def load_entailment_pairs(path: Union[str, Path]) -> List[PremiseHypothesisPair]:
    pairs: List[PremiseHypothesisPair] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = EntailmentRecord.model_validate(json.loads(line))
                pairs.append(PremiseHypothesisPair.from_text(record.premise, record.hypothesis, record.label))
            except (json.JSONDecodeError, ValidationError, DataError) as exc:
                raise ParseError(str(exc).splitlines()[0], path=str(path), line=line_no) from exc
    logger.info("Loaded %d entailment pairs from %s", len(pairs), path)
    return pairs


# ---------------------------------------------------------------------------
# HuggingFace hub (offline reproduction runs only)
# ---------------------------------------------------------------------------

def load_arc_from_hub(subset: str = "ARC-Challenge", split: str = "test") -> List[Question]:
    try:
        from datasets import load_dataset
        rows = load_dataset(ARC_HUB_REPO, subset, split=split)
    except Exception as exc:
        logger.warning("Could not load %s/%s from the hub: %s", ARC_HUB_REPO, subset, exc)
        raise DataError(f"cannot load {ARC_HUB_REPO} {subset}/{split}: {exc}") from exc

    questions = []
    for row in rows:
        record = {
            "id": row["id"],
            "question": {"stem": row["question"],
                         "choices": [{"label": l, "text": t}
                                     for l, t in zip(row["choices"]["label"], row["choices"]["text"])]},
            "answerKey": row["answerKey"],
        }
        try:
            questions.append(question_from_record(record))
        except (KeyError, ValueError) as exc:
            logger.warning("Skipping hub question %s: %s", row.get("id"), exc)
    return questions


def load_scitail_from_hub(split: str = "train") -> List[PremiseHypothesisPair]:
    try:
        from datasets import load_dataset
        rows = load_dataset(SCITAIL_HUB_REPO, "tsv_format", split=split)
    except Exception as exc:
        logger.warning("Could not load %s from the hub: %s", SCITAIL_HUB_REPO, exc)
        raise DataError(f"cannot load {SCITAIL_HUB_REPO}/{split}: {exc}") from exc

    pairs = []
    for row in rows:
        try:
            pairs.append(PremiseHypothesisPair.from_text(row["premise"], row["hypothesis"], row["label"]))
        except (DataError, ValueError) as exc:
            logger.warning("Skipping SciTail pair: %s", exc)
    return pairs
