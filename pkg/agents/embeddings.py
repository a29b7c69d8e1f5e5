"""
embeddings.py
-------------
Pretrained vector tables and knowledge-graph entity linking.

FILE FORMATS
============
  word / KG vectors : `key v1 v2 ... vd` per line, whitespace separated.
                      An optional first line `count dim` is skipped.
  KG lexicon        : `surface form<TAB>entity_id` per line; the surface form
                      is tokenised and must yield 1..3 tokens.

Both tables carry one shared vector for keys they do not contain
(OOV word / unlinked token). Tables are frozen: training never updates them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from agents.text import Token, norms
from backend.errors import ConfigurationError, ParseError

logger = logging.getLogger(__name__)

MAX_SURFACE_TOKENS = 3


# ---------------------------------------------------------------------------
# Vector tables
# ---------------------------------------------------------------------------

def random_vector(dim: int, seed: int) -> np.ndarray:
    """Uniform in ±sqrt(3/dim), the usual scale for randomly initialised embeddings."""
    scale = np.sqrt(3.0 / dim)
    return np.random.default_rng(seed).uniform(-scale, scale, size=dim)


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    keys: Dict[str, int]
    matrix: np.ndarray
    missing_vector: np.ndarray

    def __post_init__(self) -> None:
        if self.matrix.shape != (len(self.keys), self.dim):
            raise ConfigurationError(
                f"embedding matrix shape {self.matrix.shape} does not match "
                f"{len(self.keys)} keys x dim {self.dim}")
        if self.missing_vector.shape != (self.dim,):
            raise ConfigurationError(
                f"fallback vector has length {self.missing_vector.shape[0]}, expected {self.dim}")

    def __contains__(self, key: str) -> bool:
        return key in self.keys

    def __len__(self) -> int:
        return len(self.keys)

    def vector(self, key: str) -> np.ndarray:
        row = self.keys.get(key)
        return self.missing_vector if row is None else self.matrix[row]

    def rows(self, keys: Sequence[str]) -> List[int]:
        """Row indices into `stacked()`; missing keys map to the last row."""
        return [self.keys.get(k, len(self.keys)) for k in keys]

    def stacked(self) -> np.ndarray:
        """Table rows followed by the fallback row, (len + 1, dim)."""
        return np.vstack([self.matrix, self.missing_vector[None, :]])

    @classmethod
    def from_stacked(cls, keys: Sequence[str], stacked: np.ndarray):
        stacked = np.asarray(stacked, dtype=np.float64)
        return cls(dim=stacked.shape[1], keys={k: i for i, k in enumerate(keys)},
                   matrix=stacked[:-1].copy(), missing_vector=stacked[-1].copy())

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, Sequence[float]], dim: Optional[int] = None,
                     missing: Optional[Sequence[float]] = None, seed: int = 0):
        if dim is None:
            if not vectors:
                raise ConfigurationError("cannot infer dimension from an empty table")
            dim = len(next(iter(vectors.values())))
        keys: Dict[str, int] = {}
        rows: List[np.ndarray] = []
        for key, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise ConfigurationError(f"vector for {key!r} has length {arr.size}, expected {dim}")
            if key not in keys:
                keys[key] = len(rows)
                rows.append(arr)
        matrix = np.stack(rows) if rows else np.zeros((0, dim))
        fallback = random_vector(dim, seed) if missing is None else np.asarray(missing, dtype=np.float64)
        return cls(dim=dim, keys=keys, matrix=matrix, missing_vector=fallback)


class WordEmbeddingTable(EmbeddingTable):
    """Norm-token → vector, with one shared OOV vector."""

    @property
    def oov_vector(self) -> np.ndarray:
        return self.missing_vector


class KgEmbeddingTable(EmbeddingTable):
    """Entity id → vector, with one shared UNK vector for unlinked tokens."""

    @property
    def unk_vector(self) -> np.ndarray:
        return self.missing_vector


def _read_vectors(path: Union[str, Path], dim: Optional[int], lowercase: bool) -> Dict[str, np.ndarray]:
    vectors: Dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # "count dim" header
            key, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise ConfigurationError(
                    f"{path}:line {line_no}: vector has {len(values)} values, expected {dim}")
            try:
                vec = np.asarray([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"non-numeric vector value ({exc})", path=str(path), line=line_no) from exc
            if lowercase:
                key = key.lower()
            vectors.setdefault(key, vec)
    if not vectors:
        raise ConfigurationError(f"{path}: no vectors found")
    return vectors


def load_word_embeddings(path: Union[str, Path], dim: Optional[int] = None,
                         seed: int = 0) -> WordEmbeddingTable:
    vectors = _read_vectors(path, dim, lowercase=True)
    table = WordEmbeddingTable.from_vectors(vectors, dim=dim, seed=seed)
    logger.info("Loaded %d word vectors (dim=%d) from %s", len(table), table.dim, path)
    return table


def load_kg_embeddings(path: Union[str, Path], dim: Optional[int] = None,
                       seed: int = 1) -> KgEmbeddingTable:
    vectors = _read_vectors(path, dim, lowercase=False)
    table = KgEmbeddingTable.from_vectors(vectors, dim=dim, seed=seed)
    logger.info("Loaded %d entity vectors (dim=%d) from %s", len(table), table.dim, path)
    return table


# ---------------------------------------------------------------------------
# Entity linking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkSpan:
    start: int
    end: int
    entity_id: str

    def __post_init__(self) -> None:
        if not 1 <= self.end - self.start <= MAX_SURFACE_TOKENS:
            raise ValueError(f"span [{self.start},{self.end}) must cover 1..{MAX_SURFACE_TOKENS} tokens")


@dataclass(frozen=True)
class KgLexicon:
    """Surface form (1..3 norm tokens joined by one space) → entity id."""

    entries: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for surface in self.entries:
            if not 1 <= len(surface.split(" ")) <= MAX_SURFACE_TOKENS:
                raise ValueError(f"surface form {surface!r} must have 1..{MAX_SURFACE_TOKENS} tokens")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "KgLexicon":
        entries: Dict[str, str] = {}
        for surface, entity_id in pairs:
            entries.setdefault(" ".join(norms(surface)), entity_id)
        return cls(entries=entries)


def load_kg_lexicon(path: Union[str, Path]) -> KgLexicon:
    entries: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ParseError("expected `surface_form<TAB>entity_id`", path=str(path), line=line_no)
            form = norms(parts[0])
            if not 1 <= len(form) <= MAX_SURFACE_TOKENS:
                raise ParseError(f"surface form must have 1..{MAX_SURFACE_TOKENS} tokens, got {len(form)}",
                                 path=str(path), line=line_no, field="surface_form")
            entries.setdefault(" ".join(form), parts[1].strip())
    logger.info("Loaded %d lexicon entries from %s", len(entries), path)
    return KgLexicon(entries=entries)


def link_entities(tokens: Sequence[Union[Token, str]], lexicon: KgLexicon) -> List[LinkSpan]:
    """
    Greedy left-to-right longest match: at each position try 3, then 2, then
    1 tokens; a match consumes its tokens, otherwise advance by one.
    """
    words = [t.norm if isinstance(t, Token) else t for t in tokens]
    spans: List[LinkSpan] = []
    if not lexicon.entries:
        return spans
    i = 0
    while i < len(words):
        for width in range(min(MAX_SURFACE_TOKENS, len(words) - i), 0, -1):
            entity = lexicon.entries.get(" ".join(words[i:i + width]))
            if entity is not None:
                spans.append(LinkSpan(i, i + width, entity))
                i += width
                break
        else:
            i += 1
    return spans
