"""
errors.py
---------
Exception hierarchy shared by every module, plus the CLI exit-code mapping.

    ArcQAError
    ├── ConfigurationError          (bad flags, bad config, dimension mismatch)
    └── DataError                   (bad input data; CLI exit code 2)
        ├── ParseError              (file + line + field context)
        ├── IndexBuildError
        ├── IndexLoadError
        ├── ModelLoadError
        └── ScoringError            (missing predictions)
"""

from __future__ import annotations

from typing import Iterable, Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class ArcQAError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigurationError(ArcQAError, ValueError):
    """Invalid configuration: flags, paths, or incompatible dimensions."""


class DataError(ArcQAError, ValueError):
    """Input data could not be used."""


class ParseError(DataError):
    """A record in an input file is malformed."""

    def __init__(
        self,
        message: str,
        *,
        path: Optional[str] = None,
        line: Optional[int] = None,
        field: Optional[str] = None,
    ) -> None:
        self.path = path
        self.line = line
        self.field = field
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class IndexBuildError(DataError):
    """The corpus produced no indexable document."""


class IndexLoadError(DataError):
    """A persisted index is missing, truncated, or not an index at all."""


class ModelLoadError(DataError):
    """A persisted model could not be restored."""


class ScoringError(DataError):
    """Exam scoring was asked for questions that have no prediction."""

    def __init__(self, missing_ids: Iterable[str]) -> None:
        self.missing_ids = sorted(missing_ids)
        shown = ", ".join(self.missing_ids[:20])
        more = "" if len(self.missing_ids) <= 20 else f" (+{len(self.missing_ids) - 20} more)"
        super().__init__(f"missing predictions for {len(self.missing_ids)} question(s): {shown}{more}")


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the documented CLI exit code."""
    return EXIT_DATA if isinstance(exc, DataError) else EXIT_USAGE
