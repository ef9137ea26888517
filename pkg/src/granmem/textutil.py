"""Deterministic text helpers: tokenization, stopwords, sentence splitting.

Everything here is a pure function of its input so that the offline
providers produce byte-identical output across runs and platforms.
"""

from __future__ import annotations

import re

# Fixed 50-word stopword list. Includes the dialogue role markers
# ("user", "assistant") and "date" so rendered-transcript boilerplate
# never surfaces as a keyword.
STOPWORDS = frozenset({
    "a", "an", "the", "and", "or", "but", "if", "then", "than", "so",
    "of", "to", "in", "on", "at", "by", "for", "with", "about", "from",
    "is", "are", "was", "were", "be", "been", "being", "do", "does",
    "did", "have", "has", "had", "will", "would", "can", "could", "should",
    "i", "you", "he", "she", "it", "we", "they", "this", "that",
    "user", "assistant", "date",
})

_TOKEN_RE = re.compile(r"[^0-9a-z]+")
_SENTENCE_END_RE = re.compile(r"[.!?]")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; drops empty tokens."""
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def content_tokens(text: str) -> list[str]:
    """Tokens with stopwords removed."""
    return [t for t in tokenize(text) if t not in STOPWORDS]


def first_sentence(text: str) -> str:
    """Prefix of ``text`` up to and including the first ., ! or ?.

    Falls back to the whole (trimmed) text when no sentence terminator
    is present. Deliberately naive: determinism beats linguistic nuance.
    """
    stripped = text.strip()
    match = _SENTENCE_END_RE.search(stripped)
    if match is None:
        return stripped
    return stripped[: match.end()].strip()


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; stable across platforms and processes."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h
