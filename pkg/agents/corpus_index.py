"""
corpus_index.py
---------------
Inverted index over a sentence corpus with BM25 ranking.

SCORING
=======
    idf(t)     = ln(1 + (N - df + 0.5) / (df + 0.5))
    tf_part    = tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    score(q,d) = sum over DISTINCT query terms t in d of idf(t) * tf_part

Documents are single sentences, one per corpus line. No stopword removal:
dropping noise terms is the rewriter's job.

ON-DISK LAYOUT (version 1)
==========================
    bytes 0..7    magic  b"ARCQAIDX"
    bytes 8..11   format version, uint32 little-endian
    bytes 12..15  header length H, uint32 little-endian
    next H bytes  UTF-8 JSON header: doc_count, skipped, params, and one
                  {name, dtype, count, offset} entry per array
    remainder     raw little-endian array payloads, back to back

Arrays: sorted vocabulary (UTF-8 blob + offsets), CSR postings (offsets,
doc ids, term frequencies), document lengths, document text (UTF-8 blob +
offsets). The SHA-256 of the whole file is the index fingerprint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from agents.text import norms
from backend.errors import ConfigurationError, DataError, IndexBuildError, IndexLoadError

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"ARCQAIDX"
INDEX_VERSION = 1
INDEX_FILENAME = "index.bin"

_LE_INT = np.dtype("<i8")
_BYTES = np.dtype("u1")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

class Bm25Params(BaseModel):
    model_config = ConfigDict(frozen=True)

    k1: float = Field(default=1.2, ge=0.0)
    b: float = Field(default=0.75, ge=0.0, le=1.0)


@dataclass(frozen=True)
class Document:
    doc_id: int
    text: str
    length: int


@dataclass(frozen=True)
class RetrievalResult:
    doc_id: int
    score: float
    rank: int


@dataclass(frozen=True)
class Index:
    """Immutable BM25 index. Build with `build_index`, restore with `load_index`."""

    postings: Dict[str, Tuple[np.ndarray, np.ndarray]]
    doc_lengths: np.ndarray
    doc_store: Tuple[str, ...]
    avg_doc_len: float
    params: Bm25Params = field(default_factory=Bm25Params)
    skipped: int = 0
    fingerprint: str = ""

    @property
    def doc_count(self) -> int:
        return int(self.doc_lengths.shape[0])

    def posting_list(self, term: str) -> List[Tuple[int, int]]:
        if term not in self.postings:
            return []
        ids, tfs = self.postings[term]
        return [(int(d), int(tf)) for d, tf in zip(ids, tfs)]

    def document(self, doc_id: int) -> Document:
        _check_doc_id(self, doc_id)
        return Document(doc_id=doc_id, text=self.doc_store[doc_id],
                        length=int(self.doc_lengths[doc_id]))


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------

def read_corpus(path: Union[str, Path]) -> Iterator[str]:
    """Yield one sentence per line of a UTF-8 corpus file."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            yield line.rstrip("\r\n")


def _count_shard(counts: Sequence[Counter], first_id: int) -> Dict[str, Tuple[List[int], List[int]]]:
    shard: Dict[str, Tuple[List[int], List[int]]] = {}
    for offset, counter in enumerate(counts):
        doc_id = first_id + offset
        for term, tf in counter.items():
            ids, tfs = shard.setdefault(term, ([], []))
            ids.append(doc_id)
            tfs.append(tf)
    return shard


def build_index(docs: Iterable[str], params: Bm25Params | None = None,
                shards: int = 1) -> Index:
    """
    Index *docs* in input order; empty documents are skipped and counted.

    The corpus is cut into `shards` contiguous ranges that are counted
    independently and merged in range order, so postings come out sorted by
    doc id and identical for every shard count.
    """
    if shards < 1:
        raise ConfigurationError(f"shards must be >= 1, got {shards}")
    params = params or Bm25Params()

    texts: List[str] = []
    counts: List[Counter] = []
    skipped = 0
    for text in docs:
        terms = norms(text)
        if not terms:
            skipped += 1
            continue
        texts.append(text)
        counts.append(Counter(terms))

    if not texts:
        raise IndexBuildError(f"corpus has no indexable document ({skipped} empty line(s) skipped)")
    if skipped:
        logger.warning("Skipped %d empty document(s) while building the index.", skipped)

    n = len(counts)
    bounds = np.linspace(0, n, num=min(shards, n) + 1).astype(int)
    merged: Dict[str, Tuple[List[int], List[int]]] = {}
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        for term, (ids, tfs) in _count_shard(counts[lo:hi], int(lo)).items():
            dst_ids, dst_tfs = merged.setdefault(term, ([], []))
            dst_ids.extend(ids)
            dst_tfs.extend(tfs)

    postings = {
        term: (_frozen(np.asarray(ids, dtype=_LE_INT)), _frozen(np.asarray(tfs, dtype=_LE_INT)))
        for term, (ids, tfs) in sorted(merged.items())
    }
    lengths = [sum(c.values()) for c in counts]
    index = Index(
        postings=postings,
        doc_lengths=_frozen(np.asarray(lengths, dtype=_LE_INT)),
        doc_store=tuple(texts),
        avg_doc_len=sum(lengths) / n,
        params=params,
        skipped=skipped,
    )
    fingerprint = hashlib.sha256(_serialise(index)).hexdigest()
    object.__setattr__(index, "fingerprint", fingerprint)
    logger.info("Indexed %d document(s), %d term(s).", n, len(postings))
    return index


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def _idf(doc_count: int, df: int) -> float:
    return math.log(1.0 + (doc_count - df + 0.5) / (df + 0.5))


def _tf_part(tf, dl, avgdl: float, k1: float, b: float):
    # Shared by the scalar and vectorised paths so both round identically.
    return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))


def _check_doc_id(index: Index, doc_id: int) -> None:
    if not 0 <= doc_id < index.doc_count:
        raise DataError(f"unknown doc_id {doc_id} (index has {index.doc_count} documents)")


def _distinct(terms: Iterable[str]) -> List[str]:
    return list(dict.fromkeys(terms))


def bm25_score(index: Index, query_terms: Sequence[str], doc_id: int) -> float:
    """BM25 of one document; duplicate query terms count once."""
    _check_doc_id(index, doc_id)
    k1, b = index.params.k1, index.params.b
    dl = index.doc_lengths[doc_id]
    score = 0.0
    for term in _distinct(query_terms):
        if term not in index.postings:
            continue
        ids, tfs = index.postings[term]
        pos = int(np.searchsorted(ids, doc_id))
        if pos == len(ids) or ids[pos] != doc_id:
            continue
        tf_part = _tf_part(tfs[pos], dl, index.avg_doc_len, k1, b)
        score += _idf(index.doc_count, len(ids)) * tf_part
    return float(score)


def search(index: Index, query: str, k: int) -> List[RetrievalResult]:
    """
    Top-k documents sharing at least one term with *query*,
    ordered by (score desc, doc_id asc).
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    terms = [t for t in _distinct(norms(query)) if t in index.postings]
    if not terms:
        return []

    k1, b = index.params.k1, index.params.b
    all_ids, all_contrib = [], []
    for term in terms:
        ids, tfs = index.postings[term]
        idf = _idf(index.doc_count, len(ids))
        tf_part = _tf_part(tfs, index.doc_lengths[ids], index.avg_doc_len, k1, b)
        all_ids.append(ids)
        all_contrib.append(idf * tf_part)

    doc_ids, inverse = np.unique(np.concatenate(all_ids), return_inverse=True)
    scores = np.zeros(len(doc_ids), dtype=np.float64)
    # add.at is unbuffered and walks in order: each doc sums its terms in query order.
    np.add.at(scores, inverse, np.concatenate(all_contrib))

    order = np.lexsort((doc_ids, -scores))[:k]
    return [
        RetrievalResult(doc_id=int(doc_ids[i]), score=float(scores[i]), rank=r)
        for r, i in enumerate(order, 1)
    ]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _blob(strings: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    encoded = [s.encode("utf-8") for s in strings]
    offsets = np.zeros(len(encoded) + 1, dtype=_LE_INT)
    np.cumsum([len(e) for e in encoded], out=offsets[1:])
    return np.frombuffer(b"".join(encoded), dtype=_BYTES), offsets


def _unblob(data: np.ndarray, offsets: np.ndarray) -> List[str]:
    raw = data.tobytes()
    return [raw[offsets[i]:offsets[i + 1]].decode("utf-8") for i in range(len(offsets) - 1)]


def _serialise(index: Index) -> bytes:
    terms = list(index.postings)
    term_data, term_offsets = _blob(terms)
    text_data, text_offsets = _blob(index.doc_store)
    posting_offsets = np.zeros(len(terms) + 1, dtype=_LE_INT)
    np.cumsum([len(index.postings[t][0]) for t in terms], out=posting_offsets[1:])
    empty = np.zeros(0, dtype=_LE_INT)
    arrays = {
        "term_data": term_data,
        "term_offsets": term_offsets,
        "posting_offsets": posting_offsets,
        "posting_doc_ids": np.concatenate([index.postings[t][0] for t in terms] or [empty]),
        "posting_tfs": np.concatenate([index.postings[t][1] for t in terms] or [empty]),
        "doc_lengths": np.asarray(index.doc_lengths, dtype=_LE_INT),
        "text_data": text_data,
        "text_offsets": text_offsets,
    }

    entries, payload, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "count": int(arr.size), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({
        "doc_count": index.doc_count,
        "skipped": index.skipped,
        "params": index.params.model_dump(),
        "arrays": entries,
    }, sort_keys=True).encode("utf-8")
    return (INDEX_MAGIC + struct.pack("<II", INDEX_VERSION, len(header))
            + header + b"".join(payload))


def _index_file(path: Union[str, Path]) -> Path:
    p = Path(path)
    return p / INDEX_FILENAME if p.is_dir() or p.suffix == "" else p


def save_index(index: Index, path: Union[str, Path]) -> Path:
    """Write *index* to `<path>/index.bin` (or to *path* itself if it names a file)."""
    target = _index_file(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(_serialise(index))
    logger.info("Saved index (%d docs) → %s", index.doc_count, target)
    return target


def load_index(path: Union[str, Path]) -> Index:
    target = _index_file(path)
    try:
        raw = target.read_bytes()
    except OSError as exc:
        raise IndexLoadError(f"cannot read index {target}: {exc}") from exc

    try:
        if raw[:8] != INDEX_MAGIC:
            raise ValueError("bad magic header (not an index file)")
        version, header_len = struct.unpack("<II", raw[8:16])
        if version != INDEX_VERSION:
            raise ValueError(f"unsupported index format version {version}")
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
        body = memoryview(raw)[16 + header_len:]
        arrays: Dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            start = entry["offset"]
            stop = start + entry["count"] * dtype.itemsize
            if stop > len(body):
                raise ValueError(f"array {entry['name']!r} truncated")
            arrays[entry["name"]] = np.frombuffer(body[start:stop], dtype=dtype)

        terms = _unblob(arrays["term_data"], arrays["term_offsets"])
        po = arrays["posting_offsets"]
        postings = {
            term: (arrays["posting_doc_ids"][po[i]:po[i + 1]], arrays["posting_tfs"][po[i]:po[i + 1]])
            for i, term in enumerate(terms)
        }
        lengths = arrays["doc_lengths"]
        if len(lengths) != header["doc_count"] or len(lengths) == 0:
            raise ValueError("document count does not match header")
        index = Index(
            postings=postings,
            doc_lengths=lengths,
            doc_store=tuple(_unblob(arrays["text_data"], arrays["text_offsets"])),
            avg_doc_len=sum(int(x) for x in lengths) / len(lengths),
            params=Bm25Params(**header["params"]),
            skipped=int(header.get("skipped", 0)),
            fingerprint=hashlib.sha256(raw).hexdigest(),
        )
    except (ValueError, KeyError, TypeError, IndexError, struct.error, UnicodeDecodeError) as exc:
        raise IndexLoadError(f"corrupt index {target}: {exc}") from exc
    logger.info("Loaded index (%d docs) ← %s", index.doc_count, target)
    return index
