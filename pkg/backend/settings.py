"""
settings.py
-----------
Environment-driven defaults for the whole package.

All modules read shared knobs from here. This is the one place where
environment variable names and their defaults live, next to the logging setup.
CLI flags always win over these values.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()

# ---------------------------------------------------------------------------
# Configuration (override via .env)
# ---------------------------------------------------------------------------

ENV_PREFIX = "ARCQA_"

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


class Settings(BaseModel):
    """Process-wide defaults resolved from the environment."""

    cache_dir: Optional[Path] = None
    bm25_k1: float = Field(default=1.2, ge=0.0)
    bm25_b: float = Field(default=0.75, ge=0.0, le=1.0)
    log_level: str = "INFO"
    workers: int = Field(default=4, ge=1)
    seed: int = 13

    @classmethod
    def from_env(cls) -> "Settings":
        def _get(name: str) -> Optional[str]:
            value = os.getenv(ENV_PREFIX + name)
            return value if value not in (None, "") else None

        raw: dict[str, object] = {
            "cache_dir": _get("CACHE_DIR"),
            "bm25_k1": _get("BM25_K1"),
            "bm25_b": _get("BM25_B"),
            "log_level": _get("LOG_LEVEL"),
            "workers": _get("WORKERS"),
            "seed": _get("SEED"),
        }
        return cls(**{k: v for k, v in raw.items() if v is not None})


def get_settings() -> Settings:
    return Settings.from_env()


def configure_logging(level: Optional[str] = None) -> None:
    """Install one stderr handler on the root logger."""
    resolved = (level or get_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, resolved, logging.INFO),
                        format=LOG_FORMAT, force=True)
