"""Global query planning: sub-question DAGs, wave schedules and context rephrasing.

A plan is produced by one LLM exchange. The response carries a node list,
an edge list (prerequisite -> dependent) and the id of the final node. It is
parsed strictly and repaired at most once before being rejected.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum

from kgpath.errors import ExtractionError, IntegrityError, PlanningError, SequencingError
from kgpath.llm.gateway import CompletionRequest, LLMGateway

logger = logging.getLogger(__name__)

MAX_SUBQUESTIONS = 12
_ID_RE = re.compile(r"^S(\d+)\.(\d+)$")
_PLACEHOLDER_RE = re.compile(r"\[A(\d+\.\d+)\]")


class SubQuestionKind(str, Enum):
    DISAMBIGUATION = "disambiguation"
    STANDARD = "standard"


@dataclass(frozen=True)
class SubQuestion:
    id: str
    text: str
    kind: SubQuestionKind = SubQuestionKind.STANDARD
    depends_on: frozenset[str] = frozenset()
    sequence: int = 1
    resolved_answer: str | None = None

    @property
    def step(self) -> int:
        return parse_id(self.id)[1]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "kind": self.kind.value,
            "depends_on": sorted(self.depends_on),
            "sequence": self.sequence,
            "resolved_answer": self.resolved_answer,
        }


def parse_id(node_id: str) -> tuple[int, int]:
    m = _ID_RE.match(node_id)
    if not m:
        raise PlanningError(f"sub-question id {node_id!r} is not of the form S<seq>.<step>")
    return int(m.group(1)), int(m.group(2))


def id_sort_key(node_id: str):
    m = _ID_RE.match(node_id)
    return (0, int(m.group(1)), int(m.group(2)), node_id) if m else (1, 0, 0, node_id)


@dataclass
class PlanDag:
    query: str
    nodes: dict[str, SubQuestion]
    edges: list[tuple[str, str]]
    final_node: str
    repairs: list[str] = field(default_factory=list)

    def predecessors(self, node_id: str) -> set[str]:
        return {a for a, b in self.edges if b == node_id}

    def successors(self, node_id: str) -> set[str]:
        return {b for a, b in self.edges if a == node_id}

    def ancestors(self, node_id: str) -> set[str]:
        out: set[str] = set()
        stack = [node_id]
        while stack:
            for p in self.predecessors(stack.pop()):
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return out

    def validate(self) -> None:
        """Raise :class:`PlanningError` unless every PlanDag invariant holds."""
        if not self.nodes:
            raise PlanningError("plan has no sub-questions")
        if len(self.nodes) > MAX_SUBQUESTIONS:
            raise PlanningError(f"plan has {len(self.nodes)} sub-questions (cap {MAX_SUBQUESTIONS})")
        if self.final_node not in self.nodes:
            raise PlanningError(f"final node {self.final_node!r} is not in the plan")
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise PlanningError(f"edge ({a}, {b}) has an unknown endpoint")
            if a == b:
                raise PlanningError(f"self-dependency on {a}")
        for nid, node in self.nodes.items():
            if not node.text.strip():
                raise PlanningError(f"sub-question {nid} has empty text")
            if node.depends_on != frozenset(self.predecessors(nid)):
                raise PlanningError(f"depends_on of {nid} disagrees with the edge list")
            if node.kind is SubQuestionKind.DISAMBIGUATION and node.sequence != 0:
                raise PlanningError(f"disambiguation node {nid} is not in sequence 0")
        if self.successors(self.final_node):
            raise PlanningError("final node has dependents")
        try:
            topo_schedule(self)
        except IntegrityError as exc:
            raise PlanningError(str(exc)) from exc
        reach = self.ancestors(self.final_node) | {self.final_node}
        stray = sorted(set(self.nodes) - reach, key=id_sort_key)
        if stray:
            raise PlanningError(f"sub-questions {stray} do not lead to the final node")

    def to_record(self) -> dict:
        return {
            "query": self.query,
            "nodes": [self.nodes[k].to_record() for k in sorted(self.nodes, key=id_sort_key)],
            "edges": [list(e) for e in self.edges],
            "final": self.final_node,
            "repairs": list(self.repairs),
        }


@dataclass(frozen=True)
class Schedule:
    waves: list[list[str]]

    def wave_of(self) -> dict[str, int]:
        return {n: i for i, wave in enumerate(self.waves) for n in wave}

    def order(self) -> list[str]:
        return [n for wave in self.waves for n in wave]


def topo_schedule(dag: PlanDag) -> Schedule:
    """Kahn layering: wave ``i`` holds every node whose prerequisites all sit in
    earlier waves. Nodes inside a wave are sorted by id."""
    indeg = {n: 0 for n in dag.nodes}
    succ: dict[str, list[str]] = {n: [] for n in dag.nodes}
    for a, b in set(dag.edges):
        indeg[b] += 1
        succ[a].append(b)
    wave = sorted((n for n, d in indeg.items() if d == 0), key=id_sort_key)
    waves = []
    seen = 0
    while wave:
        waves.append(wave)
        seen += len(wave)
        nxt = []
        for n in wave:
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    nxt.append(m)
        wave = sorted(nxt, key=id_sort_key)
    if seen != len(dag.nodes):
        stuck = sorted((n for n, d in indeg.items() if d > 0), key=id_sort_key)
        raise IntegrityError(f"dependency cycle among {stuck}")
    return Schedule(waves)


def _creates_cycle(adj: dict[str, set[str]], a: str, b: str) -> bool:
    # adding a -> b closes a cycle iff a is reachable from b
    stack, seen = [b], {b}
    while stack:
        v = stack.pop()
        if v == a:
            return True
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def dag_from_plan(query: str, data) -> PlanDag:
    """Build a validated :class:`PlanDag` from the planner's JSON, repairing once.

    The repair round drops edges with unknown endpoints, self-edges, edges
    into disambiguation nodes from later sequences and, in declaration
    order, every edge that would close a cycle. Disambiguation nodes are then
    chained by step, every other root is made to depend on the last one, and
    dangling sinks feed the final node. Anything still invalid is a
    :class:`PlanningError`.
    """
    if not isinstance(data, dict):
        raise PlanningError("plan is not a JSON object")
    raw_nodes = data.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise PlanningError("plan has no nodes")
    if len(raw_nodes) > MAX_SUBQUESTIONS:
        raise PlanningError(f"plan has {len(raw_nodes)} sub-questions (cap {MAX_SUBQUESTIONS})")
    texts: dict[str, str] = {}
    kinds: dict[str, SubQuestionKind] = {}
    for item in raw_nodes:
        if not isinstance(item, dict):
            raise PlanningError("plan node is not an object")
        nid = str(item.get("id", "")).strip()
        parse_id(nid)
        if nid in texts:
            raise PlanningError(f"duplicate sub-question id {nid}")
        text = " ".join(str(item.get("text", "")).split())
        if not text:
            raise PlanningError(f"sub-question {nid} has empty text")
        try:
            kind = SubQuestionKind(str(item.get("kind", "standard")).lower())
        except ValueError:
            raise PlanningError(f"sub-question {nid} has unknown kind {item.get('kind')!r}") from None
        if parse_id(nid)[0] == 0:
            kind = SubQuestionKind.DISAMBIGUATION
        elif kind is SubQuestionKind.DISAMBIGUATION:
            raise PlanningError(f"disambiguation node {nid} is not in sequence 0")
        texts[nid], kinds[nid] = text, kind

    final = str(data.get("final", "")).strip()
    if final not in texts:
        raise PlanningError(f"final node {final!r} is not in the plan")

    repairs: list[str] = []
    edges: list[tuple[str, str]] = []
    adj: dict[str, set[str]] = {}
    for raw in data.get("edges") or []:
        try:
            a, b = (str(x).strip() for x in raw)
        except (TypeError, ValueError):
            raise PlanningError(f"malformed edge {raw!r}") from None
        if a not in texts or b not in texts:
            repairs.append(f"dropped edge {a}->{b}: unknown endpoint")
            continue
        if a == b:
            repairs.append(f"dropped edge {a}->{b}: self-dependency")
            continue
        if kinds[b] is SubQuestionKind.DISAMBIGUATION and kinds[a] is not SubQuestionKind.DISAMBIGUATION:
            repairs.append(f"dropped edge {a}->{b}: disambiguation must come first")
            continue
        if (a, b) in edges:
            continue
        if _creates_cycle(adj, a, b):
            repairs.append(f"dropped edge {a}->{b}: closes a cycle")
            continue
        edges.append((a, b))
        adj.setdefault(a, set()).add(b)

    def add(a: str, b: str, why: str) -> None:
        if (a, b) in edges:
            return
        if _creates_cycle(adj, a, b):
            raise PlanningError(f"cannot add required edge {a}->{b}: {why} would close a cycle")
        edges.append((a, b))
        adj.setdefault(a, set()).add(b)
        repairs.append(f"added edge {a}->{b}: {why}")

    disamb = sorted((n for n in texts if kinds[n] is SubQuestionKind.DISAMBIGUATION), key=id_sort_key)
    if disamb and final in disamb and len(texts) > len(disamb):
        raise PlanningError("final node cannot be a disambiguation step")
    for a, b in zip(disamb, disamb[1:]):
        add(a, b, "disambiguation chain")
    if disamb:
        last = disamb[-1]
        targets = {b for _, b in edges}
        for n in sorted(texts, key=id_sort_key):
            if n not in disamb and n not in targets:
                add(last, n, "roots follow disambiguation")
    if any(a == final for a, _ in edges):
        raise PlanningError("final node has dependents")
    sources = {a for a, _ in edges}
    for n in sorted(texts, key=id_sort_key):
        if n != final and n not in sources:
            add(n, final, "dangling step feeds the final answer")

    preds: dict[str, set[str]] = {n: set() for n in texts}
    for a, b in edges:
        preds[b].add(a)
    nodes = {
        n: SubQuestion(n, texts[n], kinds[n], frozenset(preds[n]), parse_id(n)[0])
        for n in sorted(texts, key=id_sort_key)
    }
    dag = PlanDag(query, nodes, edges, final, repairs)
    dag.validate()
    if repairs:
        logger.info("plan repaired: %s", "; ".join(repairs))
    return dag


def single_node_plan(query: str) -> PlanDag:
    q = " ".join(query.split())
    return PlanDag(q, {"S1.1": SubQuestion("S1.1", q)}, [], "S1.1")


def plan(query: str, llm: LLMGateway) -> PlanDag:
    """Decompose ``query`` into a validated sub-question DAG with one LLM call."""
    if not query.strip():
        raise PlanningError("query is empty")
    try:
        resp = llm.complete(CompletionRequest("plan_query", {"query": query.strip()}))
    except ExtractionError as exc:
        raise PlanningError(f"planner output is not parseable: {exc}") from exc
    return dag_from_plan(" ".join(query.split()), resp.data)


def placeholders(text: str) -> list[str]:
    return [f"S{m}" for m in _PLACEHOLDER_RE.findall(text)]


def rephrase_with_context(subq: SubQuestion, resolved: dict[str, str]) -> SubQuestion:
    """Substitute ``[A<seq>.<step>]`` placeholders with resolved answers.

    Every dependency of ``subq`` and every placeholder in its text must be
    present in ``resolved``.
    """
    missing = sorted(set(subq.depends_on) - set(resolved), key=id_sort_key)
    if missing:
        raise SequencingError(f"{subq.id} depends on unresolved {missing}")
    refs = placeholders(subq.text)
    unknown = sorted({r for r in refs if r not in resolved}, key=id_sort_key)
    if unknown:
        raise SequencingError(f"{subq.id} refers to unresolved {unknown}")
    if not refs:
        return subq
    text = _PLACEHOLDER_RE.sub(lambda m: resolved[f"S{m.group(1)}"], subq.text)
    return replace(subq, text=text)
