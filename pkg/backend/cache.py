"""
cache.py
--------
On-disk retrieval cache: one JSON file per (index fingerprint, query, k).

A hit returns exactly what `search` returned when the entry was written
(floats survive JSON unchanged). An unreadable entry is recomputed and
overwritten with a warning; the cache never changes results.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import List, Optional, Union

from agents.corpus_index import Index, RetrievalResult, search

logger = logging.getLogger(__name__)


def cache_key(fingerprint: str, query: str, k: int) -> str:
    payload = json.dumps([fingerprint, query, k], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class RetrievalCache:

    def __init__(self, cache_dir: Union[str, Path]) -> None:
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._counter_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.json"

    def lookup(self, fingerprint: str, query: str, k: int) -> Optional[List[RetrievalResult]]:
        path = self._path(cache_key(fingerprint, query, k))
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
            if entry["query"] != query or entry["k"] != k or entry["index"] != fingerprint:
                raise ValueError("key collision or stale entry")
            return [RetrievalResult(doc_id=int(r["doc_id"]), score=float(r["score"]), rank=int(r["rank"]))
                    for r in entry["results"]]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            logger.warning("Corrupt cache entry %s (%s); recomputing.", path, exc)
            return None

    def store(self, fingerprint: str, query: str, k: int, results: List[RetrievalResult]) -> None:
        path = self._path(cache_key(fingerprint, query, k))
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {
            "index": fingerprint,
            "query": query,
            "k": k,
            "results": [{"doc_id": r.doc_id, "score": r.score, "rank": r.rank} for r in results],
        }
        # write-then-rename so concurrent readers never see half an entry
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(entry, f, ensure_ascii=False)
        os.replace(tmp, path)

    def search(self, index: Index, query: str, k: int) -> List[RetrievalResult]:
        cached = self.lookup(index.fingerprint, query, k)
        if cached is not None:
            with self._counter_lock:
                self.hits += 1
            return cached
        with self._counter_lock:
            self.misses += 1
        results = search(index, query, k)
        self.store(index.fingerprint, query, k, results)
        return results
