"""Corpus loading and token-window chunking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from kgpath.errors import ConfigError, InputError
from kgpath.text import token_spans, tokenize

logger = logging.getLogger(__name__)

MIN_MAX_TOKENS = 32
DEFAULT_MAX_TOKENS = 600
DEFAULT_OVERLAP_TOKENS = 100
CORPUS_SUFFIXES = (".txt", ".md")


@dataclass(frozen=True)
class Document:
    id: str
    body: str
    title: str | None = None
    source_path: str = ""

    def __post_init__(self):
        if not self.id:
            raise InputError("document id must be non-empty")
        if not " ".join(self.body.split()):
            raise InputError(f"document {self.id!r} has an empty body")


@dataclass(frozen=True)
class Chunk:
    id: str
    doc_id: str
    ordinal: int
    text: str
    token_count: int

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "doc_id": self.doc_id,
            "ordinal": self.ordinal,
            "text": self.text,
            "token_count": self.token_count,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Chunk":
        return cls(rec["id"], rec["doc_id"], rec["ordinal"], rec["text"], rec["token_count"])


@dataclass
class LoadReport:
    """Problems met while loading a corpus. Loading never stops for these."""

    errors: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _title_of(body: str) -> str | None:
    for line in body.splitlines():
        line = line.strip().lstrip("#").strip()
        if line:
            return line
    return None


def load_corpus(
    root: str | Path, manifest: str | Path | None = None, report: LoadReport | None = None
) -> list[Document]:
    """Load every ``.txt``/``.md`` file under ``root`` (or those the manifest lists).

    Document ids are the POSIX relative paths, and documents come back sorted by
    that path. Files that cannot be read or decoded, or whose body is blank, are
    recorded in ``report`` and skipped.
    """
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"corpus root {str(root)!r} does not exist or is not a directory")
    report = report if report is not None else LoadReport()

    if manifest is not None:
        entries = []
        for line in Path(manifest).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                entries.append(line)
        paths = sorted({(root / e) for e in entries}, key=lambda p: p.relative_to(root).as_posix())
    else:
        paths = sorted(
            (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in CORPUS_SUFFIXES),
            key=lambda p: p.relative_to(root).as_posix(),
        )

    docs = []
    for path in paths:
        rel = path.relative_to(root).as_posix()
        try:
            body = path.read_bytes().decode("utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            report.errors.append((rel, f"{type(exc).__name__}: {exc}"))
            logger.warning("skipping %s: %s", rel, exc)
            continue
        try:
            docs.append(Document(id=rel, body=body, title=_title_of(body), source_path=str(path)))
        except InputError as exc:
            report.errors.append((rel, str(exc)))
            logger.warning("skipping %s: %s", rel, exc)
    if not docs:
        report.warnings.append(f"no documents found under {root}")
        logger.warning("no documents found under %s", root)
    return docs


def segment(
    doc: Document,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    overlap_tokens: int = DEFAULT_OVERLAP_TOKENS,
) -> list[Chunk]:
    """Split a document into windows of at most ``max_tokens`` tokens.

    Window ``k`` starts at token ``k * (max_tokens - overlap_tokens)``. Chunk text
    runs from the first token's start to the next window-external token's start
    (end of body for the last chunk; start of body for the first), so
    :func:`reconstruct` can undo the split exactly.
    """
    if max_tokens < MIN_MAX_TOKENS:
        raise ConfigError(f"max_tokens must be >= {MIN_MAX_TOKENS}, got {max_tokens}")
    if not 0 <= overlap_tokens < max_tokens:
        raise ConfigError(f"overlap_tokens must be in [0, {max_tokens}), got {overlap_tokens}")
    return _segment(doc, max_tokens, overlap_tokens)


def _segment(doc: Document, max_tokens: int, overlap_tokens: int) -> list[Chunk]:
    body = doc.body
    spans = token_spans(body)
    n = len(spans)
    if n == 0:
        raise InputError(f"document {doc.id!r} has no tokens")
    stride = max_tokens - overlap_tokens
    chunks = []
    start = 0
    while True:
        end = min(start + max_tokens, n)
        lo = 0 if start == 0 else spans[start][0]
        hi = len(body) if end == n else spans[end][0]
        ordinal = len(chunks)
        chunks.append(Chunk(f"{doc.id}#{ordinal}", doc.id, ordinal, body[lo:hi], end - start))
        if end == n:
            break
        start += stride
    return chunks


def reconstruct(chunks: list[Chunk], overlap_tokens: int) -> str:
    """Concatenate chunks in ordinal order, dropping each chunk's leading overlap."""
    parts = []
    for chunk in sorted(chunks, key=lambda c: c.ordinal):
        if chunk.ordinal == 0 or overlap_tokens == 0:
            parts.append(chunk.text)
            continue
        spans = token_spans(chunk.text)
        parts.append(chunk.text[spans[overlap_tokens][0]:] if overlap_tokens < len(spans) else "")
    return "".join(parts)


def segment_corpus(
    docs: list[Document],
    max_tokens: int = DEFAULT_MAX_TOKENS,
    overlap_tokens: int = DEFAULT_OVERLAP_TOKENS,
) -> list[Chunk]:
    out: list[Chunk] = []
    for doc in docs:
        out.extend(segment(doc, max_tokens, overlap_tokens))
    return out


__all__ = [
    "Chunk",
    "Document",
    "LoadReport",
    "load_corpus",
    "reconstruct",
    "segment",
    "segment_corpus",
    "tokenize",
]
