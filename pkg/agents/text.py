"""
text.py
-------
Tokenisation shared by the index, the rewriter and the entailment scorers.

Normalisation = lowercase, split on whitespace and on every non-alphanumeric
character, drop empty fragments. Digits are kept ("CO2-rich" -> co2, rich).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Sequence, Tuple

# Runs of Unicode letters/digits; "_" is a word char for \w but not alphanumeric.
_ALNUM_RUN = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class Token:
    surface: str
    norm: str
    byte_span: Tuple[int, int]


def tokenize(text: str) -> List[Token]:
    """Split *text* into normalised tokens with UTF-8 byte offsets."""
    tokens: List[Token] = []
    byte_pos = 0
    char_pos = 0
    for m in _ALNUM_RUN.finditer(text):
        byte_pos += len(text[char_pos:m.start()].encode("utf-8"))
        width = len(m.group().encode("utf-8"))
        tokens.append(Token(surface=m.group(), norm=m.group().lower(),
                            byte_span=(byte_pos, byte_pos + width)))
        byte_pos += width
        char_pos = m.end()
    return tokens


def tokens_from_words(words: Sequence[str]) -> Tuple[List[Token], List[int]]:
    """
    Tokens for pre-split words, normalised exactly as `tokenize` would
    normalise the space-joined text, plus the source word index of each
    token ("CO2-rich" yields two tokens from one word).

    Raises ValueError for a word without letters or digits.
    """
    tokens: List[Token] = []
    origin: List[int] = []
    byte_pos = 0
    for i, word in enumerate(words):
        pieces = tokenize(word)
        if not pieces:
            raise ValueError(f"word {i + 1} ({word!r}) has no letters or digits")
        for t in pieces:
            start, end = t.byte_span
            tokens.append(Token(surface=t.surface, norm=t.norm,
                                byte_span=(byte_pos + start, byte_pos + end)))
            origin.append(i)
        byte_pos += len(word.encode("utf-8")) + 1
    return tokens, origin


def norms(text: str) -> List[str]:
    """Just the normalised forms, in order."""
    return [t.norm for t in tokenize(text)]
