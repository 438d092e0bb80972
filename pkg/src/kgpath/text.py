"""Deterministic tokenizer and small lexical helpers.

Words are maximal runs of ``\\w`` characters; every other non-space
character is its own token. Token spans index into the original string so
callers can slice text back out without loss.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_SENTENCE_RE = re.compile(r"[^.!?]+(?:[.!?]+|$)")

STOPWORDS = frozenset(
    """
    a about above after again against all also am an and any are as at be
    because been before being below between both but by can could did do does
    doing down during each few for from further had has have having he her
    here hers herself him himself his how i if in into is it its itself just
    me more most my myself no nor not now of off on once only or other our
    ours ourselves out over own same she should so some such than that the
    their theirs them themselves then there these they this those through to
    too under until up very was we were what when where which while who whom
    why will with would you your yours yourself yourselves
    """.split()
)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def token_spans(text: str) -> list[tuple[int, int]]:
    """Return ``(start, end)`` character offsets for every token."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def is_word(token: str) -> bool:
    return bool(token) and (token[0].isalnum() or token[0] == "_")


def content_words(text: str) -> list[str]:
    """Lower-cased word tokens with stopwords removed."""
    return [t.lower() for t in tokenize(text) if is_word(t) and t.lower() not in STOPWORDS]


def sentences(text: str) -> list[str]:
    out = []
    for m in _SENTENCE_RE.finditer(text):
        s = " ".join(m.group(0).split())
        if s:
            out.append(s)
    return out


def truncate_tokens(text: str, limit: int) -> str:
    spans = token_spans(text)
    if len(spans) <= limit:
        return text
    return text[: spans[limit - 1][1]]


_LEADING_ARTICLES = ("the ", "a ", "an ")


def canonical_key(name: str) -> str:
    """Case-fold, trim, collapse whitespace and strip one leading article."""
    key = " ".join(name.casefold().split())
    for article in _LEADING_ARTICLES:
        if key.startswith(article) and len(key) > len(article):
            key = key[len(article):]
            break
    return key
