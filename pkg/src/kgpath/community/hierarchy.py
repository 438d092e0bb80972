"""Multi-level community hierarchy built by repeated Leiden over contracted graphs."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from kgpath.community.leiden import leiden_partition
from kgpath.errors import ExtractionError, InputError, TransportError
from kgpath.graph import KnowledgeGraph
from kgpath.llm.gateway import CompletionRequest, LLMGateway
from kgpath.text import truncate_tokens

logger = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (1.0, 0.5, 0.25)
MAX_LEVELS = 3
DETAILS_TOKEN_BUDGET = 3000


@dataclass
class Community:
    id: str
    level: int
    members: frozenset[str]
    summary: str = ""
    parent: str | None = None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "members": sorted(self.members),
            "parent": self.parent,
            "summary": self.summary,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Community":
        return cls(rec["id"], rec["level"], frozenset(rec["members"]), rec.get("summary", ""),
                   rec.get("parent"))


@dataclass
class CommunityHierarchy:
    levels: list[list[Community]] = field(default_factory=list)

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1

    def all(self) -> list[Community]:
        return [c for level in self.levels for c in level]

    def by_id(self) -> dict[str, Community]:
        return {c.id: c for c in self.all()}

    def entity_members(self, community: Community) -> set[str]:
        """Entity keys under ``community`` at any depth."""
        if community.level == 0:
            return set(community.members)
        index = self.by_id()
        out: set[str] = set()
        for child in community.members:
            out |= self.entity_members(index[child])
        return out

    @property
    def summarized(self) -> bool:
        return bool(self.levels) and all(c.summary for c in self.all())

    def records(self) -> list[dict]:
        return [c.to_record() for c in self.all()]

    @classmethod
    def from_records(cls, records: list[dict]) -> "CommunityHierarchy":
        comms = [Community.from_record(r) for r in records]
        levels: list[list[Community]] = []
        for c in comms:
            while len(levels) <= c.level:
                levels.append([])
            levels[c.level].append(c)
        return cls(levels)


def _group(partition: dict) -> list[list]:
    groups: dict[int, list] = {}
    for node, label in partition.items():
        groups.setdefault(label, []).append(node)
    return [sorted(groups[k]) for k in sorted(groups)]


def _contract(weights: dict[str, dict[str, float]], owner: dict[str, str]) -> dict:
    out: dict[str, dict[str, float]] = {c: {} for c in sorted(set(owner.values()))}
    for u, nbrs in weights.items():
        for v, w in nbrs.items():
            a, b = owner[u], owner[v]
            if a == b and u == v:
                out[a][a] = out[a].get(a, 0.0) + w
            elif a == b:
                if u < v:
                    out[a][a] = out[a].get(a, 0.0) + w
            else:
                out[a][b] = out[a].get(b, 0.0) + w
    return out


def build_hierarchy(
    graph: KnowledgeGraph,
    resolution_schedule=DEFAULT_SCHEDULE,
    seed: int = 0,
    max_levels: int = MAX_LEVELS,
) -> CommunityHierarchy:
    """Level 0 is Leiden over the entity graph; level ``k+1`` is Leiden over the
    graph obtained by contracting every level-``k`` community to one node.

    Stops when a level has a single community, when a new partition would not
    merge anything, or when the schedule (capped at ``max_levels``) runs out.
    """
    if not len(graph):
        raise InputError("cannot build a hierarchy over an empty graph")
    schedule = list(resolution_schedule)[:max_levels]
    if not schedule:
        raise InputError("resolution schedule is empty")
    weights = graph.undirected_weights()
    hierarchy = CommunityHierarchy()
    part = leiden_partition(weights, schedule[0], seed)
    level0 = [Community(f"L0C{i}", 0, frozenset(m)) for i, m in enumerate(_group(part))]
    hierarchy.levels.append(level0)

    current = level0
    owner = {e: c.id for c in level0 for e in c.members}
    for level, resolution in enumerate(schedule[1:], start=1):
        if len(current) == 1:
            break
        weights = _contract(weights, owner)
        part = leiden_partition(weights, resolution, seed)
        groups = _group(part)
        if len(groups) >= len(current):
            break
        nxt = [Community(f"L{level}C{i}", level, frozenset(m)) for i, m in enumerate(groups)]
        by_id = {c.id: c for c in current}
        for parent in nxt:
            for child in parent.members:
                by_id[child].parent = parent.id
        hierarchy.levels.append(nxt)
        owner = {child: parent.id for parent in nxt for child in parent.members}
        current = nxt
    return hierarchy


@dataclass
class SummaryReport:
    fallbacks: list[tuple[str, str]] = field(default_factory=list)


def _level0_inputs(c: Community, graph: KnowledgeGraph) -> tuple[str, str]:
    names = [graph.entities[k].display_name for k in sorted(c.members)]
    lines = []
    for k in sorted(c.members):
        e = graph.entities[k]
        lines.append(f"{e.display_name} ({e.entity_type}): {' '.join(e.description.split())}")
    for (s, d, label), rel in sorted(graph.relations.items()):
        if s in c.members and d in c.members:
            lines.append(
                f"{graph.entities[s].display_name} -[{label}]-> {graph.entities[d].display_name}: "
                f"{' '.join(rel.description.split())}"
            )
    return "\n".join(names), truncate_tokens("\n".join(lines), DETAILS_TOKEN_BUDGET)


def summarize(
    hierarchy: CommunityHierarchy,
    graph: KnowledgeGraph,
    llm: LLMGateway,
    workers: int = 4,
    report: SummaryReport | None = None,
) -> CommunityHierarchy:
    """Fill every community summary, level by level from the leaves up.

    Singleton communities reuse their only member's text. A failed LLM call
    leaves the member names as the summary and is recorded in ``report``.
    """
    report = report if report is not None else SummaryReport()
    by_id: dict[str, Community] = {}

    def one(c: Community) -> str:
        if c.level == 0:
            if len(c.members) == 1:
                (k,) = c.members
                e = graph.entities[k]
                return e.description or e.display_name
            members, details = _level0_inputs(c, graph)
            fallback = "; ".join(members.splitlines())
        else:
            children = [by_id[m] for m in sorted(c.members)]
            if len(children) == 1:
                return children[0].summary
            members = "\n".join(ch.id for ch in children)
            details = truncate_tokens(
                "\n".join(f"[{ch.id}] {' '.join(ch.summary.split())}" for ch in children),
                DETAILS_TOKEN_BUDGET,
            )
            fallback = "; ".join(sorted(
                graph.entities[k].display_name for k in hierarchy.entity_members(c)))
        try:
            text = llm.complete(CompletionRequest("summarize_community", {
                "community_id": c.id, "level": str(c.level), "members": members, "details": details,
            })).text
        except (ExtractionError, TransportError) as exc:
            text = ""
            logger.warning("summary failed for %s: %s", c.id, exc)
        if not text.strip():
            report.fallbacks.append((c.id, "empty or failed summary"))
            return fallback
        return text

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for level in hierarchy.levels:
            for c, text in zip(level, pool.map(one, level)):
                c.summary = text
                by_id[c.id] = c
    return hierarchy
