"""End-to-end indexing and question answering."""

from __future__ import annotations

import contextvars
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from kgpath.community.hierarchy import SummaryReport, build_hierarchy, summarize
from kgpath.errors import (
    ConfigError,
    GenerationError,
    InputError,
    PlanningError,
    RetrievalError,
    TransportError,
)
from kgpath.graph import extract_all, merge
from kgpath.index import Index
from kgpath.ingest import Document, segment_corpus
from kgpath.llm.gateway import LLMGateway, start_recording
from kgpath.planner import PlanDag, plan, rephrase_with_context, single_node_plan, topo_schedule
from kgpath.rerank import INTRINSIC_ONLY, RerankWeights, default_weights, rerank
from kgpath.retrieval import QueryType, Retriever, ScoredChunk
from kgpath.generate import (
    FinalAnswer,
    ResolvedAnswer,
    resolve_subquestion,
    synthesize,
    unresolved_marker,
)
from kgpath.config import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class IndexReport:
    extraction_failures: list[tuple[str, str]] = field(default_factory=list)
    summary_fallbacks: list[tuple[str, str]] = field(default_factory=list)


def build_index(
    docs: list[Document],
    llm: LLMGateway,
    cfg: RunConfig | None = None,
    report: IndexReport | None = None,
    progress=None,
) -> Index:
    """Chunk, extract, merge, cluster, summarize and embed ``docs``."""
    cfg = cfg or RunConfig()
    report = report if report is not None else IndexReport()
    say = progress or (lambda msg: logger.info(msg))
    if not docs:
        raise InputError("no documents")
    chunks = segment_corpus(docs, cfg.max_tokens, cfg.overlap_tokens)
    say(f"segmented {len(docs)} documents into {len(chunks)} chunks")
    extractions = extract_all(chunks, llm, cfg.workers, report.extraction_failures)
    graph = merge(extractions, llm)
    say(f"graph: {len(graph.entities)} entities, {len(graph.relations)} relations")
    if len(graph):
        hierarchy = build_hierarchy(graph, cfg.resolution_schedule, cfg.leiden_seed)
        sreport = SummaryReport()
        summarize(hierarchy, graph, llm, cfg.workers, sreport)
        report.summary_fallbacks.extend(sreport.fallbacks)
    else:
        from kgpath.community.hierarchy import CommunityHierarchy

        hierarchy = CommunityHierarchy()
    say(f"hierarchy: {[len(level) for level in hierarchy.levels]} communities per level")
    index = Index({c.id: c for c in chunks}, graph, hierarchy)
    index.embed(llm)
    llm.expected_dim = index.embed_dim
    say(f"embedded {len(index.embedding_keys)} items (dim {index.embed_dim})")
    index.check()
    return index


@dataclass
class _NodeResult:
    answer: ResolvedAnswer
    context: list[ScoredChunk]
    trace: dict


class Engine:
    """Answers questions over a loaded index.

    ``mode`` selects the ablation: ``full`` plans and reranks, ``no_plan``
    answers the question as a single node, ``no_rerank`` plans but fixes
    beta at 0, and ``naive`` skips the graph for plain top-k chunk search.
    """

    def __init__(self, index: Index, llm: LLMGateway, cfg: RunConfig | None = None):
        self.index = index
        self.llm = llm
        self.cfg = cfg or RunConfig()
        if index.embed_dim:
            llm.expected_dim = index.embed_dim
        self.retriever = Retriever(index, llm, self.cfg.seed_floor)

    def _embed(self, texts: list[str]):
        return self.llm.embed_matrix(texts)

    def make_plan(self, question: str, mode: str) -> tuple[PlanDag, dict]:
        info: dict = {}
        if mode in ("no_plan", "naive"):
            return single_node_plan(question), info
        try:
            return plan(question, self.llm), info
        except (PlanningError, TransportError) as exc:
            if not self.cfg.plan_fallback:
                raise PlanningError(str(exc)) from exc
            logger.warning("planning failed, answering without a plan: %s", exc)
            info["plan_error"] = str(exc)
            return single_node_plan(question), info

    def _weights(self, qclass: QueryType, mode: str) -> RerankWeights:
        if mode == "no_rerank":
            return INTRINSIC_ONLY
        return self.cfg.weights or default_weights(qclass)

    def retrieve(self, question: str, mode: str, trace: dict) -> tuple[list[ScoredChunk], QueryType]:
        cfg = self.cfg
        if mode == "naive":
            trace["class"] = "naive"
            return self.retriever.naive_search(question, cfg.k_chunks), QueryType.SCQ
        qclass = self.retriever.classify(question)
        trace["class"] = qclass.value.value
        trace["class_rationale"] = qclass.rationale
        if qclass.value is QueryType.SCQ:
            found = self.retriever.local_search(question, cfg.k_entities, cfg.k_chunks, trace)
            if not found and self.index.hierarchy.summarized:
                trace["fallback"] = "global"
                found = self.retriever.global_search(question, cfg.level_policy, cfg.k_communities, trace)
        else:
            found = self.retriever.global_search(question, cfg.level_policy, cfg.k_communities, trace)
        return found, qclass.value

    def _resolve_node(self, dag: PlanDag, node_id: str, answers: dict[str, ResolvedAnswer],
                      mode: str) -> _NodeResult:
        node = dag.nodes[node_id]
        trace: dict = {"id": node_id, "original_text": node.text}
        substitutions = {}
        dep_answers = []
        for dep in sorted(node.depends_on):
            ans = answers[dep]
            if ans.failed:
                substitutions[dep] = unresolved_marker(dep)
            else:
                substitutions[dep] = ans.text
                dep_answers.append(ans.text)
        node = rephrase_with_context(node, substitutions)
        trace["text"] = node.text
        try:
            candidates, qclass = self.retrieve(node.text, mode, trace)
        except (ConfigError, TransportError, InputError) as exc:
            raise RetrievalError(f"retrieval failed for {node_id}: {exc}") from exc
        weights = self._weights(qclass, mode)
        ranked = rerank(candidates, dep_answers, weights, self._embed)
        context = ranked[: self.cfg.k_context]
        trace["weights"] = weights.to_record()
        trace["reranked"] = bool(dep_answers)
        trace["candidates_scored"] = [c.to_record() for c in ranked]
        trace["context"] = [c.chunk_id for c in context]
        try:
            answer = resolve_subquestion(node, context, self.llm, weights)
        except GenerationError as exc:
            logger.warning("%s", exc)
            trace["error"] = str(exc)
            answer = ResolvedAnswer(node_id, unresolved_marker(node_id), [], weights, failed=True)
        trace["answer"] = answer.text
        return _NodeResult(answer, context, trace)

    def answer(self, question: str, mode: str | None = None) -> FinalAnswer:
        mode = mode or self.cfg.mode
        if not question.strip():
            raise InputError("question is empty")
        ctx = contextvars.copy_context()
        return ctx.run(self._answer, question, mode)

    def _answer(self, question: str, mode: str) -> FinalAnswer:
        calls = start_recording()
        dag, plan_info = self.make_plan(question, mode)
        schedule = topo_schedule(dag)
        results: dict[str, _NodeResult] = {}
        answers: dict[str, ResolvedAnswer] = {}
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            for wave in schedule.waves:
                futures = [pool.submit(contextvars.copy_context().run, self._resolve_node, dag, n, answers, mode)
                           for n in wave]
                for n, fut in zip(wave, futures):
                    results[n] = fut.result()
                for n in wave:
                    answers[n] = results[n].answer

        order = schedule.order()
        knowledge: dict[str, ScoredChunk] = {}
        for c in results[dag.final_node].context:
            knowledge[c.chunk_id] = c
        for n in order:
            if n == dag.final_node:
                continue
            for c in results[n].context[: self.cfg.prior_top]:
                if c.chunk_id not in knowledge or knowledge[c.chunk_id].score < c.score:
                    knowledge[c.chunk_id] = c

        trace = {
            "mode": mode,
            "config": {k: v for k, v in self.cfg.to_dict().items()},
            "plan": dag.to_record(),
            "schedule": schedule.waves,
            "nodes": [results[n].trace for n in order],
            **plan_info,
        }
        final = synthesize(
            dag.query, [answers[n] for n in order], list(knowledge.values()), self.llm,
            self.cfg.synthesis_budget, trace,
        )
        final.trace["calls"] = [
            {"kind": r.kind, "template": r.template_id, "sha256": r.digest, "attempts": r.attempts,
             "ok": r.ok}
            for r in calls
        ]
        return final
