"""Provider-agnostic completion and embedding gateway.

The gateway owns everything that is common to all providers: template
lookup and rendering, response parsing, retries with exponential backoff,
rate limiting, embedding normalization and a replay log of request hashes.
Providers only move text and vectors.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from kgpath.errors import ConfigError, ExtractionError, InputError, TransportError
from kgpath.llm.templates import TemplateRegistry

logger = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    variables: dict[str, str]
    max_output_tokens: int = 1024
    temperature: float = 0.0

    def digest(self) -> str:
        payload = json.dumps(
            {
                "template_id": self.template_id,
                "variables": self.variables,
                "max_output_tokens": self.max_output_tokens,
                "temperature": self.temperature,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Completion:
    text: str
    data: Any = None


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    dim: int

    def normalized(self) -> "EmbeddingVector":
        return EmbeddingVector(normalize(self.values), self.dim)


class TransientError(TransportError):
    """A provider failure worth retrying (timeouts, 429, 5xx)."""


class Provider(Protocol):
    name: str
    embed_dim: int

    def complete(self, request: CompletionRequest, prompt: str) -> str: ...

    def embed(self, texts: list[str]) -> np.ndarray: ...


class RateLimiter:
    """Spaces calls at least ``1 / rate`` seconds apart across threads."""

    def __init__(self, rate: float | None):
        self.interval = 1.0 / rate if rate else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait > 0:
            time.sleep(wait)


def normalize(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    norms = np.linalg.norm(values, axis=-1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise InputError("cannot normalize a zero or non-finite embedding")
    return values / norms


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def parse_json_block(text: str) -> Any:
    """Parse the first fenced JSON block in ``text``, or the whole text as JSON."""
    m = _FENCE_RE.search(text)
    candidate = m.group(1) if m else text
    try:
        return json.loads(candidate)
    except json.JSONDecodeError:
        pass
    # Tolerate prose around an unfenced object.
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        try:
            return json.loads(text[start : end + 1])
        except json.JSONDecodeError:
            pass
    raise ExtractionError("response does not contain parseable JSON", raw=text)


@dataclass
class CallRecord:
    kind: str
    template_id: str
    digest: str
    attempts: int
    ok: bool


_RECORDER: ContextVar[list | None] = ContextVar("kgpath_call_recorder", default=None)


def start_recording() -> list[CallRecord]:
    """Collect the calls made from the current context (and contexts copied from it)."""
    records: list[CallRecord] = []
    _RECORDER.set(records)
    return records


@dataclass
class CallLog:
    records: list[CallRecord] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, record: CallRecord) -> None:
        with self._lock:
            self.records.append(record)
        local = _RECORDER.get()
        if local is not None:
            local.append(record)

    def mark(self) -> int:
        with self._lock:
            return len(self.records)

    def since(self, mark: int) -> list[CallRecord]:
        with self._lock:
            return list(self.records[mark:])


class LLMGateway:
    """Entry point for every completion and embedding call the pipeline makes.

    Args:
        provider: Backend that actually produces text and vectors.
        templates: Registry resolving ``template_id`` to prompt text.
        max_attempts: Upper bound on provider calls per logical request.
        backoff: Base delay in seconds; retry ``k`` (from 1) waits ``backoff * 2**(k - 1)``.
        rate: Optional requests-per-second ceiling shared by all threads.
    """

    def __init__(
        self,
        provider: Provider,
        templates: TemplateRegistry | None = None,
        max_attempts: int = 3,
        backoff: float = 0.5,
        rate: float | None = None,
    ):
        if max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        self.provider = provider
        self.templates = templates or TemplateRegistry.builtin()
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.limiter = RateLimiter(rate)
        self.log = CallLog()
        self.expected_dim: int | None = None

    @property
    def embed_dim(self) -> int:
        return self.provider.embed_dim

    def complete(self, req: CompletionRequest) -> Completion:
        template = self.templates.get(req.template_id)
        prompt = template.render(req.variables)
        last_exc: Exception | None = None
        attempts = 0
        for attempt in range(self.max_attempts):
            attempts = attempt + 1
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self.limiter.acquire()
            try:
                text = self.provider.complete(req, prompt)
            except TransientError as exc:
                last_exc = exc
                logger.info("transient provider failure on %s: %s", req.template_id, exc)
                continue
            except TransportError:
                self.log.add(CallRecord("complete", req.template_id, req.digest(), attempts, False))
                raise
            if template.output == "text":
                self.log.add(CallRecord("complete", req.template_id, req.digest(), attempts, True))
                return Completion(text.strip())
            try:
                data = parse_json_block(text)
            except ExtractionError as exc:
                last_exc = exc
                continue
            self.log.add(CallRecord("complete", req.template_id, req.digest(), attempts, True))
            return Completion(text, data)
        self.log.add(CallRecord("complete", req.template_id, req.digest(), attempts, False))
        if isinstance(last_exc, ExtractionError):
            raise last_exc
        raise TransportError(f"provider failed after {attempts} attempts: {last_exc}")

    def embed_matrix(self, texts: list[str]) -> np.ndarray:
        """Embed ``texts`` into an ``(n, dim)`` array of unit-norm rows."""
        texts = list(texts)
        for t in texts:
            if not isinstance(t, str) or not t.strip():
                raise InputError("cannot embed an empty text")
        if not texts:
            return np.zeros((0, self.embed_dim))
        digest = hashlib.sha256("\x1e".join(texts).encode("utf-8")).hexdigest()
        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self.limiter.acquire()
            try:
                raw = np.asarray(self.provider.embed(texts), dtype=np.float64)
            except TransientError as exc:
                last_exc = exc
                continue
            self.log.add(CallRecord("embed", "", digest, attempt + 1, True))
            if raw.shape[0] != len(texts):
                raise TransportError("provider returned the wrong number of embeddings")
            dim = raw.shape[1]
            if self.expected_dim is not None and dim != self.expected_dim:
                raise ConfigError(f"embedding dim {dim} does not match index dim {self.expected_dim}")
            return normalize(raw)
        self.log.add(CallRecord("embed", "", digest, self.max_attempts, False))
        raise TransportError(f"embedding failed after {self.max_attempts} attempts: {last_exc}")

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        mat = self.embed_matrix(texts)
        return [EmbeddingVector(row, mat.shape[1]) for row in mat]
