"""
schemas.py
----------
Pydantic models for every file and report contract of the QA pipeline:
question files, predictions, evaluation / sweep reports and the run config.

Internal computation uses the dataclasses in agents/; these models are the
single source of truth for what goes to and comes from disk.
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from backend.errors import ConfigurationError


# ---------------------------------------------------------------------------
# Shared enums
# ---------------------------------------------------------------------------


class ScorerName(str, Enum):
    LEXICAL = "lexical"
    MLSTM   = "mlstm"


class RuleName(str, Enum):
    AI2       = "ai2"
    MAXENTAIL = "maxentail"


class EntailmentLabel(str, Enum):
    ENTAILS = "entails"
    NEUTRAL = "neutral"


# ---------------------------------------------------------------------------
# Questions
# ---------------------------------------------------------------------------


class Choice(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str = Field(min_length=1)
    text: str


class Question(BaseModel):
    """One multiple-choice question (ARC distribution schema, flattened)."""

    model_config = ConfigDict(frozen=True)

    id: str
    stem: str
    choices: List[Choice] = Field(min_length=1)
    answer_key: Optional[str] = None

    @model_validator(mode="after")
    def _labels_consistent(self) -> "Question":
        labels = [c.label for c in self.choices]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate choice labels {labels}")
        if self.answer_key is not None and self.answer_key not in labels:
            raise ValueError(f"answer key {self.answer_key!r} is not one of {labels}")
        return self

    @property
    def labels(self) -> List[str]:
        return [c.label for c in self.choices]


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


class PipelineConfig(BaseModel):
    """Everything that determines a run's output. `tagger_path=None` means passthrough."""

    index_path: Path
    tagger_path: Optional[Path] = None
    scorer: ScorerName = ScorerName.LEXICAL
    entail_model_path: Optional[Path] = None
    rule: RuleName = RuleName.MAXENTAIL
    depth: int = Field(default=8, ge=1)
    split: bool = False
    k_retrieve: Optional[int] = Field(default=None, ge=1)
    cache_dir: Optional[Path] = None
    workers: int = Field(default=4, ge=1)
    trace: bool = False

    @model_validator(mode="after")
    def _scorer_has_model(self) -> "PipelineConfig":
        if self.scorer is ScorerName.MLSTM and self.entail_model_path is None:
            raise ValueError("scorer 'mlstm' needs entail_model_path")
        return self

    @property
    def fetch_depth(self) -> int:
        """Passages retrieved per query; defaults to twice the rule depth."""
        return self.k_retrieve if self.k_retrieve is not None else 2 * self.depth

    def validate_paths(self) -> None:
        paths = {"index": self.index_path, "tagger": self.tagger_path,
                 "entailment model": self.entail_model_path}
        for name, path in paths.items():
            if path is not None and not Path(path).exists():
                raise ConfigurationError(f"{name} path does not exist: {path}")

    def snapshot(self) -> Dict[str, object]:
        return self.model_dump(mode="json")


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------


class PredictionRecord(BaseModel):
    """One line of the predictions file."""

    id: str
    selected: List[str] = Field(min_length=1)
    scores: Dict[str, float] = Field(default_factory=dict)
    no_evidence: bool = False


class EvalReport(BaseModel):
    accuracy: float
    questions: int
    credits: Dict[str, float] = Field(default_factory=dict)
    timing_seconds: float = 0.0
    config: Dict[str, object] = Field(default_factory=dict)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


class SweepReport(BaseModel):
    rule: RuleName
    accuracies: Dict[int, float]

    @property
    def best_depth(self) -> int:
        # smallest depth among the best
        best = max(self.accuracies.values())
        return min(d for d, acc in self.accuracies.items() if acc == best)


class RuleComparison(BaseModel):
    t_statistic: float
    p_value: float
    mean_difference: float
    questions: int


class EntailmentMetrics(BaseModel):
    accuracy: float
    log_loss: float
    pairs: int


class RetrievedPassage(BaseModel):
    doc_id: int
    score: float
    rank: int


class QuestionTraceRecord(BaseModel):
    """Serialised QuestionTrace, written by `answer --trace`."""

    id: str
    selected_terms: List[str]
    queries: Dict[str, str]
    retrieved: Dict[str, List[RetrievedPassage]]
    evidence: List[Dict[str, object]]
    selected: List[str]
    scores: Dict[str, float]
    no_evidence: bool = False
