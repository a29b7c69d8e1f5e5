"""
rewriter.py
-----------
Essential-term tagger: BiLSTM-CRF over question tokens, optionally enriched
with knowledge-graph entity features, labelling each token keep (1) / drop (0).

INPUT PER TOKEN
===============
    [ word vector (d) ; link vector (10) ; entity vector (kg_dim) ]

  link vector    one of two learned vectors: token inside / outside a linked
                 surface form (greedy longest match, up to three words)
  entity vector  the linked entity's row in the KG table, or the shared UNK row

Without a KG table the input is the word vector alone. Word and KG tables
are frozen; link vectors, BiLSTM, emission projection and CRF are trained
with per-sentence SGD, lr_t = lr0 / (1 + decay * t) at epoch t.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field
from safetensors import safe_open
from safetensors.torch import save_file
from sklearn.metrics import accuracy_score, precision_recall_fscore_support
from torch import nn

from agents.crf import LinearChainCRF
from agents.embeddings import (KgEmbeddingTable, KgLexicon, LinkSpan, WordEmbeddingTable,
                               link_entities)
from agents.layers import DTYPE, BiLSTM, reset_linear, seeded_generator
from agents.text import Token, tokenize
from backend.errors import ConfigurationError, DataError, ModelLoadError, ParseError

logger = logging.getLogger(__name__)

LABELS = (0, 1)
RATING_MIN, RATING_MAX = 1, 5
TAGGER_FORMAT = "arcqa-tagger"
TAGGER_VERSION = "1"


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def binarize_ratings(ratings: Sequence[int], threshold: int = 3) -> List[int]:
    """label = 1 iff rating >= threshold."""
    labels = []
    for i, r in enumerate(ratings):
        if not isinstance(r, (int, np.integer)) or not RATING_MIN <= r <= RATING_MAX:
            raise ParseError(f"rating {r!r} at position {i} outside {RATING_MIN}..{RATING_MAX}",
                             field="ratings")
        labels.append(1 if r >= threshold else 0)
    return labels


@dataclass(frozen=True)
class EssentialTermsExample:
    tokens: List[Token]
    ratings: List[int]
    labels: List[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.labels:
            object.__setattr__(self, "labels", binarize_ratings(self.ratings))
        if not len(self.tokens) == len(self.ratings) == len(self.labels):
            raise ParseError(f"{len(self.tokens)} tokens, {len(self.ratings)} ratings, "
                             f"{len(self.labels)} labels")

    @classmethod
    def from_ratings(cls, tokens: Sequence[Token], ratings: Sequence[int],
                     threshold: int = 3) -> "EssentialTermsExample":
        return cls(tokens=list(tokens), ratings=list(ratings),
                   labels=binarize_ratings(ratings, threshold))

    @property
    def stem(self) -> str:
        return " ".join(t.surface for t in self.tokens)


class TrainConfig(BaseModel):
    epochs: int = Field(default=50, ge=1)
    lr0: float = Field(default=0.015, gt=0.0)
    lr_decay: float = Field(default=0.05, ge=0.0)
    rng_seed: int = 13
    hidden: int = Field(default=200, ge=1)
    link_dim: int = Field(default=10, ge=1)
    word_dim: Optional[int] = None
    kg_dim: Optional[int] = None

    def lr_at(self, epoch: int) -> float:
        return self.lr0 / (1.0 + self.lr_decay * epoch)


class TaggerMetrics(BaseModel):
    accuracy: float
    precision: float
    recall: float
    f1: float
    tokens: int = 0


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

def _table_matrix(table) -> torch.Tensor:
    return torch.as_tensor(table.stacked(), dtype=DTYPE)


class TaggerModel(nn.Module):

    def __init__(
        self,
        word_table: WordEmbeddingTable,
        kg_table: Optional[KgEmbeddingTable] = None,
        lexicon: Optional[KgLexicon] = None,
        hidden: int = 200,
        link_dim: int = 10,
        seed: int = 0,
        variant: str = "",
    ) -> None:
        super().__init__()
        generator = seeded_generator(seed)
        self.word_table = word_table
        self.kg_table = kg_table
        self.lexicon = lexicon or KgLexicon()
        self.variant = variant or ("kg" if kg_table is not None else "words")
        self.link_dim = link_dim

        self.register_buffer("word_matrix", _table_matrix(word_table))
        input_dim = word_table.dim
        if kg_table is not None:
            self.register_buffer("kg_matrix", _table_matrix(kg_table))
            self.link_vectors = nn.Parameter(
                torch.empty(2, link_dim, dtype=DTYPE).uniform_(
                    -np.sqrt(3.0 / link_dim), np.sqrt(3.0 / link_dim), generator=generator))
            input_dim += link_dim + kg_table.dim
        self.input_dim = input_dim

        self.bilstm = BiLSTM(input_dim, hidden, generator=generator)
        self.emission_proj = nn.Linear(self.bilstm.output_dim, len(LABELS), dtype=DTYPE)
        reset_linear(self.emission_proj, generator)
        self.crf = LinearChainCRF(len(LABELS))

    @property
    def kg_enabled(self) -> bool:
        return self.kg_table is not None

    @property
    def hidden(self) -> int:
        return self.bilstm.hidden

    def spans(self, tokens: Sequence[Token]) -> List[LinkSpan]:
        return link_entities(tokens, self.lexicon) if self.kg_enabled else []

    def emissions(self, tokens: Sequence[Token], spans: Optional[Sequence[LinkSpan]] = None) -> torch.Tensor:
        inputs = encode_tokens(tokens, self.spans(tokens) if spans is None else spans, self)
        return self.emission_proj(self.bilstm(inputs))

    def nll(self, example: EssentialTermsExample,
            spans: Optional[Sequence[LinkSpan]] = None) -> torch.Tensor:
        return self.crf.nll(self.emissions(example.tokens, spans), example.labels)

    @torch.no_grad()
    def predict(self, tokens: Sequence[Token]) -> List[int]:
        if not tokens:
            return []
        path, _ = self.crf.decode(self.emissions(tokens))
        return path

    def select(self, stem: str) -> List[str]:
        return select_terms(self, stem)


def encode_tokens(tokens: Sequence[Token], spans: Sequence[LinkSpan], model: TaggerModel) -> torch.Tensor:
    """Per-token input vectors, (T, d) or (T, d + link_dim + kg_dim)."""
    word_rows = model.word_table.rows([t.norm for t in tokens])
    words = model.word_matrix[torch.as_tensor(word_rows, dtype=torch.long)]
    if not model.kg_enabled:
        return words

    inside = [0] * len(tokens)
    entity_rows = [len(model.kg_table)] * len(tokens)
    for span in spans:
        row = model.kg_table.keys.get(span.entity_id, len(model.kg_table))
        for i in range(span.start, span.end):
            inside[i] = 1
            entity_rows[i] = row
    links = model.link_vectors[torch.as_tensor(inside, dtype=torch.long)]
    entities = model.kg_matrix[torch.as_tensor(entity_rows, dtype=torch.long)]
    return torch.cat([words, links, entities], dim=1)


def bilstm_forward(model: TaggerModel, inputs: torch.Tensor) -> torch.Tensor:
    return model.bilstm(inputs)


def crf_nll_and_gradient(model: TaggerModel,
                         example: EssentialTermsExample) -> Tuple[float, Dict[str, torch.Tensor]]:
    """Loss = log Z - score(gold) and the gradient of every trainable parameter."""
    model.zero_grad(set_to_none=True)
    loss = model.nll(example)
    loss.backward()
    grads = {name: p.grad.detach().clone()
             for name, p in model.named_parameters() if p.grad is not None}
    model.zero_grad(set_to_none=True)
    return float(loss.detach()), grads


# ---------------------------------------------------------------------------
# Training / evaluation
# ---------------------------------------------------------------------------

def _check_dims(config: TrainConfig, word_table: WordEmbeddingTable,
                kg_table: Optional[KgEmbeddingTable]) -> None:
    if config.word_dim is not None and config.word_dim != word_table.dim:
        raise ConfigurationError(f"word embeddings have dim {word_table.dim}, config expects {config.word_dim}")
    if config.kg_dim is not None:
        if kg_table is None:
            raise ConfigurationError("config sets kg_dim but no KG embeddings were given")
        if config.kg_dim != kg_table.dim:
            raise ConfigurationError(f"KG embeddings have dim {kg_table.dim}, config expects {config.kg_dim}")


def train_tagger(
    dataset: Sequence[EssentialTermsExample],
    config: TrainConfig,
    word_table: WordEmbeddingTable,
    kg_table: Optional[KgEmbeddingTable] = None,
    lexicon: Optional[KgLexicon] = None,
    dev: Optional[Sequence[EssentialTermsExample]] = None,
    variant: str = "",
) -> TaggerModel:
    """
    Per-sentence SGD for `config.epochs` epochs with a seeded shuffle.

    Returns the snapshot with the best dev F1 when *dev* is given, else the
    final epoch. `model.loss_history` holds the summed loss of each epoch and
    `model.dev_history` the dev F1 after each epoch (empty without *dev*).
    """
    if not dataset:
        raise DataError("cannot train a tagger on an empty dataset")
    _check_dims(config, word_table, kg_table)

    model = TaggerModel(word_table, kg_table, lexicon, hidden=config.hidden,
                        link_dim=config.link_dim, seed=config.rng_seed, variant=variant)
    optimizer = torch.optim.SGD([p for p in model.parameters() if p.requires_grad], lr=config.lr0)
    rng = np.random.default_rng(config.rng_seed)
    spans = [model.spans(ex.tokens) for ex in dataset]

    history: List[float] = []
    dev_history: List[float] = []
    best_f1, best_state = -1.0, None
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        total = 0.0
        for i in rng.permutation(len(dataset)):
            optimizer.zero_grad(set_to_none=True)
            loss = model.nll(dataset[i], spans[i])
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
        history.append(total)

        if dev:
            f1 = eval_tagger(model, dev).f1
            dev_history.append(f1)
            if f1 > best_f1:
                best_f1, best_state = f1, copy.deepcopy(model.state_dict())
            logger.info("epoch %d/%d lr=%.5f loss=%.4f dev_f1=%.4f",
                        epoch + 1, config.epochs, lr, total, f1)
        else:
            logger.info("epoch %d/%d lr=%.5f loss=%.4f", epoch + 1, config.epochs, lr, total)

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    model.loss_history = history
    model.dev_history = dev_history
    return model


def token_metrics(gold: Sequence[int], pred: Sequence[int]) -> TaggerMetrics:
    """Token-level metrics, positive class = essential; 0 where undefined."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold labels vs {len(pred)} predictions")
    if not gold:
        return TaggerMetrics(accuracy=0.0, precision=0.0, recall=0.0, f1=0.0, tokens=0)
    precision, recall, f1, _ = precision_recall_fscore_support(
        gold, pred, average="binary", pos_label=1, zero_division=0)
    return TaggerMetrics(accuracy=float(accuracy_score(gold, pred)), precision=float(precision),
                         recall=float(recall), f1=float(f1), tokens=len(gold))


def eval_tagger(model: TaggerModel, dataset: Sequence[EssentialTermsExample]) -> TaggerMetrics:
    gold: List[int] = []
    pred: List[int] = []
    was_training = model.training
    model.eval()
    for ex in dataset:
        gold.extend(ex.labels)
        pred.extend(model.predict(ex.tokens))
    model.train(was_training)
    return token_metrics(gold, pred)


def select_terms(model: TaggerModel, question_stem: str) -> List[str]:
    """Norm tokens labelled 1, in question order; all tokens if none are."""
    tokens = tokenize(question_stem)
    if not tokens:
        return []
    selected = [t.norm for t, label in zip(tokens, model.predict(tokens)) if label == 1]
    if not selected:
        logger.debug("Tagger kept no term; falling back to the full question.")
        return [t.norm for t in tokens]
    return selected


class PassthroughSelector:
    """Uses every question token (the original-question baseline)."""

    variant = "passthrough"

    def select(self, stem: str) -> List[str]:
        return [t.norm for t in tokenize(stem)]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_tagger(model: TaggerModel, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tensors = {name: t.detach().contiguous() for name, t in model.state_dict().items()}
    metadata = {
        "format": TAGGER_FORMAT,
        "version": TAGGER_VERSION,
        "config": json.dumps({"hidden": model.hidden, "link_dim": model.link_dim,
                              "variant": model.variant}),
        "word_keys": json.dumps(list(model.word_table.keys)),
        "kg_keys": json.dumps(list(model.kg_table.keys) if model.kg_enabled else None),
        "lexicon": json.dumps(model.lexicon.entries),
    }
    save_file(tensors, str(target), metadata=metadata)
    logger.info("Saved tagger (%s) → %s", model.variant, target)
    return target


def load_tagger(path: Union[str, Path]) -> TaggerModel:
    try:
        with safe_open(str(path), framework="pt") as f:
            metadata = f.metadata() or {}
            tensors = {name: f.get_tensor(name) for name in f.keys()}
        if metadata.get("format") != TAGGER_FORMAT:
            raise ValueError("not a tagger model file")
        if metadata.get("version") != TAGGER_VERSION:
            raise ValueError(f"unsupported tagger format version {metadata.get('version')}")
        config = json.loads(metadata["config"])
        word_table = WordEmbeddingTable.from_stacked(json.loads(metadata["word_keys"]),
                                                     tensors["word_matrix"].numpy())
        kg_keys = json.loads(metadata["kg_keys"])
        kg_table = None if kg_keys is None else KgEmbeddingTable.from_stacked(kg_keys, tensors["kg_matrix"].numpy())
        model = TaggerModel(word_table, kg_table, KgLexicon(json.loads(metadata["lexicon"])),
                            hidden=config["hidden"], link_dim=config["link_dim"],
                            variant=config["variant"])
        model.load_state_dict(tensors)
    except Exception as exc:  # safetensors raises its own error type
        raise ModelLoadError(f"cannot load tagger from {path}: {exc}") from exc
    model.eval()
    return model
