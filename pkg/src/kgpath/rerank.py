"""Dependency-aware reranking.

When a sub-question depends on already-resolved sub-questions, each
candidate chunk gets a dependency similarity (best cosine against any
resolved answer, mapped from [-1, 1] onto [0, 1]) and the list is re-sorted
by ``alpha * intrinsic + beta * similarity``. Chunks that agree with no
resolved answer are filtered out, but never below a minimum context size.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from kgpath.errors import ConfigError, InputError
from kgpath.retrieval import QueryClass, QueryType, ScoredChunk, with_scores

WEIGHT_SUM_TOLERANCE = 1e-9
INCONGRUENCE_FLOOR = 0.05
MIN_SURVIVORS = 3

Embedder = Callable[[list[str]], np.ndarray]


@dataclass(frozen=True)
class RerankWeights:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if abs(self.alpha + self.beta - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ConfigError(f"alpha + beta must equal 1, got {self.alpha} + {self.beta}")

    @classmethod
    def from_alpha(cls, alpha: float) -> "RerankWeights":
        return cls(alpha, 1.0 - alpha)

    def to_record(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta}


SCQ_WEIGHTS = RerankWeights(0.6, 0.4)
ACQ_WEIGHTS = RerankWeights(0.75, 0.25)
INTRINSIC_ONLY = RerankWeights(1.0, 0.0)


def default_weights(query_class: QueryClass | QueryType | str) -> RerankWeights:
    value = getattr(query_class, "value", query_class)
    value = QueryType(getattr(value, "value", value))
    return SCQ_WEIGHTS if value is QueryType.SCQ else ACQ_WEIGHTS


def _check_answers(resolved_answers: Sequence[str]) -> None:
    for a in resolved_answers:
        if not isinstance(a, str) or not a.strip():
            raise InputError("resolved answers must be non-empty strings")


def similarity_matrix(chunk_vecs: np.ndarray, answer_vecs: np.ndarray) -> np.ndarray:
    """Per-chunk dependency similarity in [0, 1] from unit-norm embeddings."""
    best = (chunk_vecs @ answer_vecs.T).max(axis=1)
    return np.clip((best + 1.0) / 2.0, 0.0, 1.0)


def similarity(chunk: ScoredChunk, resolved_answers: Sequence[str], embed: Embedder) -> float:
    """Best cosine between ``chunk`` and any resolved answer, mapped to [0, 1]."""
    if not resolved_answers:
        raise InputError("similarity needs at least one resolved answer")
    _check_answers(resolved_answers)
    vecs = embed([chunk.text, *resolved_answers])
    return float(similarity_matrix(vecs[:1], vecs[1:])[0])


def combine(intrinsic: float, sim: float, weights: RerankWeights) -> float:
    return weights.alpha * intrinsic + weights.beta * sim


def rerank(
    chunks: Sequence[ScoredChunk],
    resolved_answers: Sequence[str],
    weights: RerankWeights,
    embed: Embedder | None = None,
    similarities: Sequence[float] | None = None,
    floor: float = INCONGRUENCE_FLOOR,
    min_survivors: int = MIN_SURVIVORS,
) -> list[ScoredChunk]:
    """Rerank ``chunks`` against resolved prerequisite answers.

    With no resolved answers the input list is returned as is. Otherwise
    ``similarities`` (if given, one per chunk) or ``embed`` supplies each
    chunk's dependency similarity.
    """
    if not resolved_answers:
        return list(chunks)
    _check_answers(resolved_answers)
    chunks = list(chunks)
    if not chunks:
        return []
    if similarities is None:
        if embed is None:
            raise ConfigError("rerank needs either an embedder or precomputed similarities")
        vecs = embed([c.text for c in chunks] + list(resolved_answers))
        sims = similarity_matrix(vecs[: len(chunks)], vecs[len(chunks):])
    else:
        sims = np.asarray(similarities, dtype=np.float64)
        if sims.shape != (len(chunks),):
            raise InputError("need exactly one similarity per chunk")
    scored = [
        with_scores(c, float(s), combine(c.intrinsic_score, float(s), weights))
        for c, s in zip(chunks, sims)
    ]
    scored.sort(key=lambda c: (-c.combined_score, c.chunk_id))
    # drop incongruent evidence, weakest first, while enough context survives
    drop = set()
    for c in reversed(scored):
        if c.similarity_score < floor and len(scored) - len(drop) - 1 >= min_survivors:
            drop.add(c.chunk_id)
    return [c for c in scored if c.chunk_id not in drop]
