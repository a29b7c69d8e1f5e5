"""
entailment.py
-------------
P(entails) for a premise / hypothesis pair. Two scorers share one protocol,
`entail(premise_text, hypothesis_text) -> EntailmentScore`:

  LexicalScorer     share of the hypothesis' distinct content tokens that
                    also occur in the premise (no training)
  MatchLstmScorer   match-LSTM, trained on {entails, neutral} pairs

MATCH-LSTM
==========
    p_i, h_j = BiLSTM(premise), BiLSTM(hypothesis)      (one shared encoder)
    e_ij     = p_i . h_j
    alpha_ij = softmax over i of e_ij                   (per hypothesis token)
    a_j      = sum_i alpha_ij p_i
    m_j      = [a_j ; h_j]  → LSTM(m) left to right
    logits   = W · maxpool_j(h^m_j) + b                 (class 0 = entails)

Training is plain SGD on cross-entropy with gradient-norm clipping.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Protocol, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field
from safetensors import safe_open
from safetensors.torch import save_file
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS
from torch import nn

from agents.embeddings import WordEmbeddingTable
from agents.layers import DTYPE, BiLSTM, MatcherLSTM, reset_linear, seeded_generator
from agents.text import norms
from backend.errors import ConfigurationError, DataError, ModelLoadError
from backend.schemas import EntailmentLabel, EntailmentMetrics

logger = logging.getLogger(__name__)

ENTAILS, NEUTRAL = 0, 1
LABEL_INDEX = {EntailmentLabel.ENTAILS: ENTAILS, EntailmentLabel.NEUTRAL: NEUTRAL}
STOPWORDS = frozenset(ENGLISH_STOP_WORDS)
ENTAIL_FORMAT = "arcqa-mlstm"
ENTAIL_VERSION = "1"


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PremiseHypothesisPair:
    premise: List[str]
    hypothesis: List[str]
    gold_label: Optional[EntailmentLabel] = None

    def __post_init__(self) -> None:
        if not self.premise or not self.hypothesis:
            raise DataError("premise and hypothesis need at least one token each")

    @classmethod
    def from_text(cls, premise: str, hypothesis: str,
                  label: Optional[Union[str, EntailmentLabel]] = None) -> "PremiseHypothesisPair":
        return cls(norms(premise), norms(hypothesis),
                   None if label is None else EntailmentLabel(label))


@dataclass(frozen=True)
class ContextualStates:
    p_states: torch.Tensor  # (K, 2h)
    h_states: torch.Tensor  # (N, 2h)


@dataclass(frozen=True)
class AttentionResult:
    e: torch.Tensor      # (K, N)
    alpha: torch.Tensor  # (K, N), columns sum to 1
    a: torch.Tensor      # (N, 2h)


@dataclass(frozen=True)
class EntailmentScore:
    p_entails: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_entails <= 1.0:
            raise ValueError(f"p_entails {self.p_entails} outside [0, 1]")

    @property
    def p_neutral(self) -> float:
        return 1.0 - self.p_entails


class EntailmentScorer(Protocol):
    name: str

    def entail(self, premise: str, hypothesis: str) -> EntailmentScore: ...


# ---------------------------------------------------------------------------
# Lexical baseline
# ---------------------------------------------------------------------------

def _content_tokens(text: Union[str, Sequence[str]]) -> set:
    tokens = norms(text) if isinstance(text, str) else text
    return {t for t in tokens if t not in STOPWORDS}


def lexical_entail(premise: Union[str, Sequence[str]],
                   hypothesis: Union[str, Sequence[str]]) -> EntailmentScore:
    hyp = _content_tokens(hypothesis)
    if not hyp:
        return EntailmentScore(0.0)
    return EntailmentScore(len(hyp & _content_tokens(premise)) / len(hyp))


class LexicalScorer:
    name = "lexical"

    def entail(self, premise: str, hypothesis: str) -> EntailmentScore:
        return lexical_entail(premise, hypothesis)


# ---------------------------------------------------------------------------
# Match-LSTM
# ---------------------------------------------------------------------------

class EntailmentTrainConfig(BaseModel):
    epochs: int = Field(default=30, ge=1)
    lr: float = Field(default=0.01, gt=0.0)
    clip: float = Field(default=5.0, gt=0.0)
    seed: int = 13
    hidden: int = Field(default=50, ge=1)
    matcher: int = Field(default=50, ge=1)
    word_dim: Optional[int] = None


def attention(p_states: torch.Tensor, h_states: torch.Tensor) -> AttentionResult:
    if p_states.shape[0] == 0 or h_states.shape[0] == 0:
        raise ValueError("attention needs non-empty premise and hypothesis states")
    e = p_states @ h_states.T
    alpha = torch.softmax(e, dim=0)
    return AttentionResult(e=e, alpha=alpha, a=alpha.T @ p_states)


class MatchLstmModel(nn.Module):

    def __init__(self, word_table: WordEmbeddingTable, hidden: int = 50, matcher: int = 50,
                 seed: int = 0) -> None:
        super().__init__()
        generator = seeded_generator(seed)
        self.word_table = word_table
        self.register_buffer("word_matrix", torch.as_tensor(word_table.stacked(), dtype=DTYPE))
        self.encoder = BiLSTM(word_table.dim, hidden, generator=generator)
        self.matcher = MatcherLSTM(2 * self.encoder.output_dim, matcher, generator=generator)
        self.classifier = nn.Linear(matcher, 2, dtype=DTYPE)
        reset_linear(self.classifier, generator)

    @property
    def hidden(self) -> int:
        return self.encoder.hidden

    @property
    def matcher_hidden(self) -> int:
        return self.matcher.hidden

    def encode(self, tokens: Sequence[str]) -> torch.Tensor:
        rows = torch.as_tensor(self.word_table.rows(tokens), dtype=torch.long)
        return self.encoder(self.word_matrix[rows])

    def contextual_states(self, pair: PremiseHypothesisPair) -> ContextualStates:
        return ContextualStates(self.encode(pair.premise), self.encode(pair.hypothesis))

    def matcher_states(self, pair: PremiseHypothesisPair) -> torch.Tensor:
        states = self.contextual_states(pair)
        att = attention(states.p_states, states.h_states)
        return self.matcher(torch.cat([att.a, states.h_states], dim=1))

    def logits(self, pair: PremiseHypothesisPair) -> torch.Tensor:
        pooled = self.matcher_states(pair).max(dim=0).values
        return self.classifier(pooled)

    def loss(self, pair: PremiseHypothesisPair) -> torch.Tensor:
        if pair.gold_label is None:
            raise DataError("training pair has no gold label")
        target = torch.tensor([LABEL_INDEX[pair.gold_label]])
        return F.cross_entropy(self.logits(pair).unsqueeze(0), target)


def match_forward(model: MatchLstmModel, pair: PremiseHypothesisPair) -> EntailmentScore:
    with torch.no_grad():
        probs = torch.softmax(model.logits(pair), dim=0)
    return EntailmentScore(float(probs[ENTAILS]))


class MatchLstmScorer:
    name = "mlstm"

    def __init__(self, model: MatchLstmModel) -> None:
        self.model = model.eval()

    def entail(self, premise: str, hypothesis: str) -> EntailmentScore:
        p, h = norms(premise), norms(hypothesis)
        if not p or not h:
            return EntailmentScore(0.0)
        return match_forward(self.model, PremiseHypothesisPair(p, h))


def score_evidence(scorer: EntailmentScorer, premise_text: str, context_prefix: str,
                   hypothesis: str) -> EntailmentScore:
    premise = f"{context_prefix} {premise_text}" if context_prefix else premise_text
    return scorer.entail(premise, hypothesis)


# ---------------------------------------------------------------------------
# Training / evaluation
# ---------------------------------------------------------------------------

def build_match_lstm(word_table: WordEmbeddingTable, config: EntailmentTrainConfig) -> MatchLstmModel:
    if config.word_dim is not None and config.word_dim != word_table.dim:
        raise ConfigurationError(f"word embeddings have dim {word_table.dim}, config expects {config.word_dim}")
    return MatchLstmModel(word_table, hidden=config.hidden, matcher=config.matcher, seed=config.seed)


def train_entailment(model: MatchLstmModel, dataset: Sequence[PremiseHypothesisPair],
                     config: EntailmentTrainConfig) -> MatchLstmModel:
    """SGD over *dataset* in a seeded order; trains *model* in place and returns it."""
    if not dataset:
        raise DataError("cannot train entailment on an empty dataset")
    if config.word_dim is not None and config.word_dim != model.word_table.dim:
        raise ConfigurationError(f"model word dim {model.word_table.dim} != config word_dim {config.word_dim}")
    if (config.hidden, config.matcher) != (model.hidden, model.matcher_hidden):
        raise ConfigurationError(
            f"model sizes (h={model.hidden}, m={model.matcher_hidden}) do not match "
            f"config (h={config.hidden}, m={config.matcher})")
    unlabeled = sum(1 for p in dataset if p.gold_label is None)
    if unlabeled:
        raise DataError(f"{unlabeled} training pairs have no gold label")

    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    history: List[float] = []
    model.train()
    for epoch in range(config.epochs):
        total = 0.0
        for i in rng.permutation(len(dataset)):
            optimizer.zero_grad(set_to_none=True)
            loss = model.loss(dataset[i])
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.clip)
            optimizer.step()
            total += float(loss.detach())
        history.append(total / len(dataset))
        logger.info("epoch %d/%d loss=%.4f", epoch + 1, config.epochs, history[-1])
    model.eval()
    model.loss_history = history
    return model


def eval_entailment(model: MatchLstmModel, pairs: Sequence[PremiseHypothesisPair]) -> EntailmentMetrics:
    labelled = [p for p in pairs if p.gold_label is not None]
    if not labelled:
        return EntailmentMetrics(accuracy=0.0, log_loss=0.0, pairs=0)
    correct, log_loss = 0, 0.0
    with torch.no_grad():
        for pair in labelled:
            log_probs = torch.log_softmax(model.logits(pair), dim=0)
            gold = LABEL_INDEX[pair.gold_label]
            correct += int(int(torch.argmax(log_probs)) == gold)
            log_loss -= float(log_probs[gold])
    return EntailmentMetrics(accuracy=correct / len(labelled), log_loss=log_loss / len(labelled),
                             pairs=len(labelled))


def training_accuracy(model: MatchLstmModel, pairs: Iterable[PremiseHypothesisPair]) -> float:
    return eval_entailment(model, list(pairs)).accuracy


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_entailment(model: MatchLstmModel, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tensors = {name: t.detach().contiguous() for name, t in model.state_dict().items()}
    metadata = {
        "format": ENTAIL_FORMAT,
        "version": ENTAIL_VERSION,
        "config": json.dumps({"hidden": model.hidden, "matcher": model.matcher_hidden}),
        "word_keys": json.dumps(list(model.word_table.keys)),
    }
    save_file(tensors, str(target), metadata=metadata)
    logger.info("Saved match-LSTM (h=%d, m=%d) → %s", model.hidden, model.matcher_hidden, target)
    return target


def load_entailment(path: Union[str, Path]) -> MatchLstmModel:
    try:
        with safe_open(str(path), framework="pt") as f:
            metadata = f.metadata() or {}
            tensors = {name: f.get_tensor(name) for name in f.keys()}
        if metadata.get("format") != ENTAIL_FORMAT:
            raise ValueError("not a match-LSTM model file")
        if metadata.get("version") != ENTAIL_VERSION:
            raise ValueError(f"unsupported model format version {metadata.get('version')}")
        config = json.loads(metadata["config"])
        word_table = WordEmbeddingTable.from_stacked(json.loads(metadata["word_keys"]),
                                                     tensors["word_matrix"].numpy())
        model = MatchLstmModel(word_table, hidden=config["hidden"], matcher=config["matcher"])
        model.load_state_dict(tensors)
    except Exception as exc:  # safetensors raises its own error type
        raise ModelLoadError(f"cannot load entailment model from {path}: {exc}") from exc
    return model.eval()
