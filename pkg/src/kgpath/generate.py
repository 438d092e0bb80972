"""Sub-question answering and final synthesis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from kgpath.errors import ExtractionError, GenerationError, TransportError
from kgpath.llm.gateway import CompletionRequest, LLMGateway
from kgpath.planner import SubQuestion
from kgpath.rerank import RerankWeights
from kgpath.retrieval import ScoredChunk
from kgpath.text import count_tokens

logger = logging.getLogger(__name__)

INSUFFICIENT_EVIDENCE = "insufficient evidence"
DEFAULT_SYNTHESIS_BUDGET = 3000


def unresolved_marker(subq_id: str) -> str:
    return f"[unresolved:{subq_id}]"


@dataclass
class ResolvedAnswer:
    subq_id: str
    text: str
    cited_chunks: list[str]
    weights_used: RerankWeights | None = None
    failed: bool = False

    def to_record(self) -> dict:
        return {
            "subq_id": self.subq_id,
            "text": self.text,
            "cited_chunks": list(self.cited_chunks),
            "weights_used": self.weights_used.to_record() if self.weights_used else None,
            "failed": self.failed,
        }


@dataclass
class FinalAnswer:
    query: str
    text: str
    per_subq: list[ResolvedAnswer]
    cited_chunks: list[str] = field(default_factory=list)
    context_ids: list[str] = field(default_factory=list)
    degraded: bool = False
    trace: dict = field(default_factory=dict)

    @property
    def citations(self) -> list[str]:
        """Every cited chunk id, sub-answers first, without duplicates."""
        out: list[str] = []
        for ans in self.per_subq:
            out.extend(c for c in ans.cited_chunks if c not in out)
        out.extend(c for c in self.cited_chunks if c not in out)
        return out

    def to_record(self) -> dict:
        return {
            "query": self.query,
            "answer": self.text,
            "degraded": self.degraded,
            "citations": self.citations,
            "context_ids": list(self.context_ids),
            "per_subq": [a.to_record() for a in self.per_subq],
            "trace": self.trace,
        }


def render_context(chunks: list[ScoredChunk]) -> str:
    return "\n".join(f"[{c.chunk_id}] {' '.join(c.text.split())}" for c in chunks)


def render_resolved(answers: list[ResolvedAnswer]) -> str:
    return "\n".join(f"[{a.subq_id}] {' '.join(a.text.split())}" for a in answers)


def _parse_answer(data, allowed: set[str]) -> tuple[str, list[str]]:
    if not isinstance(data, dict):
        raise ExtractionError("answer output is not an object")
    text = " ".join(str(data.get("answer", "")).split())
    if not text:
        raise ExtractionError("answer output has no answer text")
    cites = []
    for c in data.get("citations") or []:
        c = str(c).strip().strip("[]")
        if c in allowed and c not in cites:
            cites.append(c)
    return text, cites


def resolve_subquestion(
    subq: SubQuestion,
    context: list[ScoredChunk],
    llm: LLMGateway,
    weights: RerankWeights | None = None,
) -> ResolvedAnswer:
    """Answer one (already rephrased) sub-question from its reranked context.

    Citations outside ``context`` are discarded. An empty context yields the
    insufficient-evidence answer without an LLM call.
    """
    if not context:
        return ResolvedAnswer(subq.id, INSUFFICIENT_EVIDENCE, [], weights)
    try:
        resp = llm.complete(CompletionRequest(
            "answer_subquestion", {"question": subq.text, "context": render_context(context)}))
        text, cites = _parse_answer(resp.data, {c.chunk_id for c in context})
    except (ExtractionError, TransportError) as exc:
        raise GenerationError(f"sub-question {subq.id} failed: {exc}") from exc
    return ResolvedAnswer(subq.id, text, cites, weights)


def _synthesis_variables(query: str, resolved: list[ResolvedAnswer], knowledge: list[ScoredChunk]) -> dict:
    return {"query": query, "resolved": render_resolved(resolved), "knowledge": render_context(knowledge)}


def fit_knowledge(
    query: str,
    resolved: list[ResolvedAnswer],
    knowledge: list[ScoredChunk],
    llm: LLMGateway,
    budget: int,
) -> list[ScoredChunk]:
    """Knowledge ordered by score, lowest-scored dropped until the prompt fits ``budget``."""
    template = llm.templates.get("synthesize_answer")
    kept = sorted(knowledge, key=lambda c: (-c.score, c.chunk_id))
    while True:
        prompt = template.render(_synthesis_variables(query, resolved, kept))
        if count_tokens(prompt) <= budget:
            return kept
        if not kept:
            raise GenerationError(
                f"synthesis prompt needs {count_tokens(prompt)} tokens with no knowledge (budget {budget})")
        kept = kept[:-1]


def synthesize(
    query: str,
    resolved: list[ResolvedAnswer],
    knowledge: list[ScoredChunk],
    llm: LLMGateway,
    budget: int = DEFAULT_SYNTHESIS_BUDGET,
    trace: dict | None = None,
) -> FinalAnswer:
    """One terminal LLM call over the query, ordered sub-answers and knowledge.

    ``resolved`` must already be in schedule order.
    """
    kept = fit_knowledge(query, resolved, knowledge, llm, budget)
    try:
        resp = llm.complete(CompletionRequest(
            "synthesize_answer", _synthesis_variables(query, resolved, kept)))
        text, cites = _parse_answer(resp.data, {c.chunk_id for c in kept})
    except (ExtractionError, TransportError) as exc:
        raise GenerationError(f"synthesis failed: {exc}") from exc
    return FinalAnswer(
        query=query,
        text=text,
        per_subq=list(resolved),
        cited_chunks=cites,
        context_ids=[c.chunk_id for c in kept],
        degraded=any(a.failed for a in resolved),
        trace=dict(trace or {}),
    )
