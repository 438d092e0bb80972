"""Query classification and candidate retrieval.

Specific questions go through entity-seeded local search; abstract ones
through community summaries. Every candidate carries an intrinsic score,
the min-max normalized cosine between the question and the candidate text
within its candidate set (all 0.5 when the set is degenerate).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from kgpath.errors import ConfigError, ExtractionError, InputError, TransportError
from kgpath.index import Index
from kgpath.llm.gateway import CompletionRequest, LLMGateway
from kgpath.text import canonical_key, tokenize

logger = logging.getLogger(__name__)

DEFAULT_K_ENTITIES = 5
DEFAULT_K_CHUNKS = 12
DEFAULT_K_COMMUNITIES = 8
SEED_FLOOR = 0.1
_MAX_MENTION_TOKENS = 6


class QueryType(str, Enum):
    SCQ = "SCQ"
    ACQ = "ACQ"


@dataclass(frozen=True)
class QueryClass:
    value: QueryType
    rationale: str = ""


class Origin(str, Enum):
    LOCAL = "local"
    COMMUNITY_SUMMARY = "community_summary"


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    text: str
    origin: Origin
    intrinsic_score: float
    similarity_score: float | None = None
    combined_score: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.intrinsic_score <= 1.0:
            raise ValueError(f"intrinsic_score {self.intrinsic_score} outside [0, 1]")
        if self.combined_score is not None and self.similarity_score is None:
            raise ValueError("combined_score requires similarity_score")

    @property
    def score(self) -> float:
        """Combined score when reranked, intrinsic score otherwise."""
        return self.intrinsic_score if self.combined_score is None else self.combined_score

    def to_record(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "origin": self.origin.value,
            "intrinsic_score": self.intrinsic_score,
            "similarity_score": self.similarity_score,
            "combined_score": self.score,
        }


def minmax(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 1e-12:
        return np.full(values.shape, 0.5)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def _rank(ids: list[str], texts: list[str], raw: np.ndarray, origin: Origin, k: int) -> list[ScoredChunk]:
    scores = minmax(raw)
    items = [ScoredChunk(i, t, origin, float(s)) for i, t, s in zip(ids, texts, scores)]
    order = sorted(range(len(items)), key=lambda j: (-raw[j], items[j].chunk_id))
    return [items[j] for j in order[:k]]


class Retriever:
    """Read-only retrieval over a loaded :class:`Index`; safe to share across threads."""

    def __init__(self, index: Index, llm: LLMGateway, seed_floor: float = SEED_FLOOR):
        self.index = index
        self.llm = llm
        self.seed_floor = seed_floor
        self._entity_keys = sorted(index.graph.entities)
        self._entity_matrix = index.matrix([f"entity:{k}" for k in self._entity_keys])

    def _qvec(self, question: str) -> np.ndarray:
        if not question.strip():
            raise InputError("question is empty")
        return self.llm.embed_matrix([question])[0]

    def mentioned_entities(self, question: str) -> list[str]:
        """Graph entity keys whose canonical form appears as a token n-gram."""
        toks = [t for t in tokenize(question)]
        found = set()
        for n in range(1, _MAX_MENTION_TOKENS + 1):
            for i in range(len(toks) - n + 1):
                key = canonical_key(" ".join(toks[i : i + n]))
                if key in self.index.graph.entities:
                    found.add(key)
        return sorted(found)

    def classify(self, question: str) -> QueryClass:
        if not question.strip():
            raise InputError("question is empty")
        try:
            data = self.llm.complete(CompletionRequest("classify_query", {"question": question})).data
            value = QueryType(str(data.get("class", "")).strip().upper())
            return QueryClass(value, str(data.get("rationale", "")))
        except (ExtractionError, TransportError, ValueError, AttributeError) as exc:
            logger.info("classifier fell back to heuristic: %s", exc)
        mentions = self.mentioned_entities(question)
        if mentions:
            return QueryClass(QueryType.SCQ, f"fallback: mentions {', '.join(mentions)}")
        return QueryClass(QueryType.ACQ, "fallback: no known entity mentioned")

    def local_search(
        self,
        question: str,
        k_entities: int = DEFAULT_K_ENTITIES,
        k_chunks: int = DEFAULT_K_CHUNKS,
        trace: dict | None = None,
    ) -> list[ScoredChunk]:
        """Seed on the entities closest to the question, expand one hop, rank chunks."""
        if k_entities < 1 or k_chunks < 1:
            raise ConfigError("k_entities and k_chunks must be >= 1")
        q = self._qvec(question)
        if not self._entity_keys:
            logger.warning("local search over an empty graph")
            return []
        sims = self._entity_matrix @ q
        order = sorted(range(len(sims)), key=lambda i: (-sims[i], self._entity_keys[i]))
        seeds = [self._entity_keys[i] for i in order[:k_entities] if sims[i] >= self.seed_floor]
        graph = self.index.graph
        expanded = set(seeds)
        for s in seeds:
            expanded |= graph.neighbors(s)
        candidates = sorted({c for e in expanded for c in graph.entities[e].source_chunks})
        if trace is not None:
            trace["seeds"] = [(self._entity_keys[i], float(sims[i])) for i in order[:k_entities]
                              if sims[i] >= self.seed_floor]
            trace["expanded"] = sorted(expanded)
            trace["candidates"] = list(candidates)
        if not candidates:
            return []
        raw = self.index.matrix([f"chunk:{c}" for c in candidates]) @ q
        texts = [self.index.chunks[c].text for c in candidates]
        return _rank(candidates, texts, raw, Origin.LOCAL, k_chunks)

    def global_search(
        self,
        question: str,
        level_policy: str = "auto",
        k: int = DEFAULT_K_COMMUNITIES,
        trace: dict | None = None,
    ) -> list[ScoredChunk]:
        """Rank community summaries from one hierarchy level.

        ``leaf`` uses level 0, ``top`` the highest level, and ``auto`` the level
        whose best summary is closest to the question (ties go to the lower level).
        """
        if k < 1:
            raise ConfigError("k must be >= 1")
        h = self.index.hierarchy
        if not h.summarized or not all(self.index.has_vector(f"community:{c.id}") for c in h.all()):
            raise ConfigError("community hierarchy has not been summarized")
        q = self._qvec(question)
        per_level = []
        for level in h.levels:
            ids = [c.id for c in level]
            per_level.append((ids, self.index.matrix([f"community:{i}" for i in ids]) @ q))
        if level_policy == "leaf":
            chosen = 0
        elif level_policy == "top":
            chosen = h.max_level
        elif level_policy == "auto":
            best = [float(raw.max()) for _, raw in per_level]
            chosen = max(range(len(best)), key=lambda i: (best[i], -i))
        else:
            raise ConfigError(f"unknown level policy {level_policy!r}")
        ids, raw = per_level[chosen]
        if trace is not None:
            trace["level"] = chosen
            trace["level_best"] = [float(r.max()) for _, r in per_level]
        by_id = h.by_id()
        return _rank(ids, [by_id[i].summary for i in ids], raw, Origin.COMMUNITY_SUMMARY, k)

    def naive_search(self, question: str, k: int = DEFAULT_K_CHUNKS) -> list[ScoredChunk]:
        """Plain embedding top-k over every chunk, bypassing the graph."""
        q = self._qvec(question)
        ids = sorted(self.index.chunks)
        raw = self.index.matrix([f"chunk:{c}" for c in ids]) @ q
        return _rank(ids, [self.index.chunks[c].text for c in ids], raw, Origin.LOCAL, k)


def with_scores(chunk: ScoredChunk, similarity: float, combined: float) -> ScoredChunk:
    return replace(chunk, similarity_score=similarity, combined_score=combined)
