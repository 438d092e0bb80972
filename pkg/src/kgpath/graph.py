"""Knowledge-graph construction: per-chunk extraction and a deterministic merge."""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from kgpath.errors import ExtractionError, IntegrityError, TransportError
from kgpath.ingest import Chunk
from kgpath.llm.gateway import CompletionRequest, LLMGateway
from kgpath.text import canonical_key, count_tokens, truncate_tokens

logger = logging.getLogger(__name__)

DESCRIPTION_TOKEN_BUDGET = 1024


@dataclass
class Entity:
    key: str
    display_name: str
    entity_type: str
    description: str
    source_chunks: frozenset[str]

    def to_record(self) -> dict:
        return {
            "kind": "entity",
            "key": self.key,
            "display_name": self.display_name,
            "entity_type": self.entity_type,
            "description": self.description,
            "source_chunks": sorted(self.source_chunks),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Entity":
        return cls(rec["key"], rec["display_name"], rec["entity_type"], rec["description"],
                   frozenset(rec["source_chunks"]))


@dataclass
class Relation:
    src: str
    dst: str
    label: str
    description: str
    source_chunks: frozenset[str]

    @property
    def weight(self) -> float:
        return float(len(self.source_chunks))

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.label)

    def to_record(self) -> dict:
        return {
            "kind": "relation",
            "src": self.src,
            "dst": self.dst,
            "label": self.label,
            "description": self.description,
            "weight": self.weight,
            "source_chunks": sorted(self.source_chunks),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Relation":
        return cls(rec["src"], rec["dst"], rec["label"], rec["description"],
                   frozenset(rec["source_chunks"]))


@dataclass
class KnowledgeGraph:
    entities: dict[str, Entity] = field(default_factory=dict)
    relations: dict[tuple[str, str, str], Relation] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entities)

    def check(self) -> None:
        for triple, rel in self.relations.items():
            if triple != rel.triple:
                raise IntegrityError(f"relation stored under wrong key {triple}")
            if rel.src == rel.dst:
                raise IntegrityError(f"self-relation on {rel.src!r}")
            for end in (rel.src, rel.dst):
                if end not in self.entities:
                    raise IntegrityError(f"relation endpoint {end!r} missing from entities")
            if not rel.source_chunks:
                raise IntegrityError(f"relation {triple} has no source chunks")
        for key, ent in self.entities.items():
            if not key or key != ent.key or not ent.source_chunks:
                raise IntegrityError(f"malformed entity {key!r}")

    def neighbors(self, key: str) -> set[str]:
        return self._adjacency().get(key, set())

    def _adjacency(self) -> dict[str, set[str]]:
        adj = getattr(self, "_adj_cache", None)
        if adj is None or getattr(self, "_adj_size", None) != len(self.relations):
            adj = {}
            for rel in self.relations.values():
                adj.setdefault(rel.src, set()).add(rel.dst)
                adj.setdefault(rel.dst, set()).add(rel.src)
            self._adj_cache, self._adj_size = adj, len(self.relations)
        return adj

    def undirected_weights(self) -> dict[str, dict[str, float]]:
        """Weighted undirected adjacency over every entity; parallel edges sum."""
        adj: dict[str, dict[str, float]] = {k: {} for k in sorted(self.entities)}
        for rel in self.relations.values():
            adj[rel.src][rel.dst] = adj[rel.src].get(rel.dst, 0.0) + rel.weight
            adj[rel.dst][rel.src] = adj[rel.dst].get(rel.src, 0.0) + rel.weight
        return adj

    def records(self) -> tuple[list[dict], list[dict]]:
        ents = [self.entities[k].to_record() for k in sorted(self.entities)]
        rels = [self.relations[t].to_record() for t in sorted(self.relations)]
        return ents, rels

    def serialize(self) -> str:
        ents, rels = self.records()
        return "\n".join(json.dumps(r, sort_keys=True, ensure_ascii=False) for r in ents + rels)

    @classmethod
    def from_records(cls, entities: list[dict], relations: list[dict]) -> "KnowledgeGraph":
        g = cls()
        for rec in entities:
            e = Entity.from_record(rec)
            g.entities[e.key] = e
        for rec in relations:
            r = Relation.from_record(rec)
            g.relations[r.triple] = r
        return g


Extraction = tuple[list[Entity], list[Relation]]


def parse_extraction(data, chunk_id: str) -> Extraction:
    """Turn the extraction template's JSON into chunk-scoped entities and relations."""
    if not isinstance(data, dict):
        raise ExtractionError("extraction output is not an object", raw=json.dumps(data))
    entities: dict[str, Entity] = {}
    src = frozenset([chunk_id])
    for item in data.get("entities") or []:
        name = " ".join(str(item.get("name", "")).split())
        key = canonical_key(name)
        if not key:
            continue
        desc = " ".join(str(item.get("description", "")).split())
        if key in entities:
            prev = entities[key]
            if desc and desc not in prev.description:
                prev.description = f"{prev.description} {desc}".strip()
            continue
        entities[key] = Entity(key, name, str(item.get("type") or "ENTITY").upper(), desc, src)
    relations: dict[tuple[str, str, str], Relation] = {}
    for item in data.get("relations") or []:
        s = canonical_key(str(item.get("source", "")))
        d = canonical_key(str(item.get("target", "")))
        label = " ".join(str(item.get("label", "")).lower().split())
        if not label or s == d or s not in entities or d not in entities:
            continue
        relations.setdefault((s, d, label), Relation(
            s, d, label, " ".join(str(item.get("description", "")).split()), src))
    return list(entities.values()), list(relations.values())


def extract(chunk: Chunk, llm: LLMGateway) -> Extraction:
    """Entities and relations stated in one chunk, each tagged with the chunk id."""
    if not chunk.text.strip():
        return [], []
    resp = llm.complete(CompletionRequest("extract_entities", {"text": chunk.text}))
    return parse_extraction(resp.data, chunk.id)


def extract_all(
    chunks: list[Chunk], llm: LLMGateway, workers: int = 4, failures: list | None = None
) -> list[Extraction]:
    """Run :func:`extract` over ``chunks`` on a bounded pool.

    Chunks whose extraction fails contribute nothing; ``(chunk_id, message)``
    pairs are appended to ``failures``.
    """

    def one(chunk: Chunk) -> Extraction:
        try:
            return extract(chunk, llm)
        except (ExtractionError, TransportError) as exc:
            logger.warning("extraction failed for %s: %s", chunk.id, exc)
            if failures is not None:
                failures.append((chunk.id, str(exc)))
            return [], []

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, chunks))


def _pick(counter: Counter) -> str:
    # most frequent, ties broken lexicographically
    return min(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def _join_descriptions(parts: set[str]) -> str:
    return "\n".join(sorted(p for p in parts if p))


def merge(per_chunk: list[Extraction], llm: LLMGateway | None = None,
          description_budget: int = DESCRIPTION_TOKEN_BUDGET) -> KnowledgeGraph:
    """Fold per-chunk extractions into one graph.

    Entities unify on their canonical key; relations on ``(src, dst, label)``.
    Every aggregate is built from sets and sorted before use, so the output does
    not depend on the order of ``per_chunk``. Descriptions longer than
    ``description_budget`` tokens are summarized through ``llm`` (or truncated
    when no gateway is given).
    """
    names: dict[str, Counter] = {}
    types: dict[str, Counter] = {}
    ent_desc: dict[str, set[str]] = {}
    ent_src: dict[str, set[str]] = {}
    rel_desc: dict[tuple, set[str]] = {}
    rel_src: dict[tuple, set[str]] = {}

    for entities, relations in per_chunk:
        for e in entities:
            names.setdefault(e.key, Counter())[e.display_name] += len(e.source_chunks)
            types.setdefault(e.key, Counter())[e.entity_type] += len(e.source_chunks)
            ent_desc.setdefault(e.key, set()).update(e.description.split("\n"))
            ent_src.setdefault(e.key, set()).update(e.source_chunks)
        for r in relations:
            rel_desc.setdefault(r.triple, set()).update(r.description.split("\n"))
            rel_src.setdefault(r.triple, set()).update(r.source_chunks)

    g = KnowledgeGraph()
    for key in sorted(names):
        desc = _join_descriptions(ent_desc[key])
        display = _pick(names[key])
        if count_tokens(desc) > description_budget:
            desc = _summarize_description(display, desc, llm, description_budget)
        g.entities[key] = Entity(key, display, _pick(types[key]), desc, frozenset(ent_src[key]))
    for triple in sorted(rel_src):
        src, dst, _ = triple
        if src == dst or src not in g.entities or dst not in g.entities:
            raise IntegrityError(f"relation {triple} references unknown entities")
        g.relations[triple] = Relation(*triple, _join_descriptions(rel_desc[triple]),
                                       frozenset(rel_src[triple]))
    g.check()
    return g


def _summarize_description(name: str, desc: str, llm: LLMGateway | None, budget: int) -> str:
    if llm is not None:
        try:
            out = llm.complete(CompletionRequest(
                "summarize_description", {"name": name, "description": desc})).text
            if out:
                return truncate_tokens(out, budget)
        except (ExtractionError, TransportError) as exc:
            logger.warning("description summary failed for %s: %s", name, exc)
    return truncate_tokens(desc, budget)


def split_by_chunk(graph: KnowledgeGraph) -> list[Extraction]:
    """Re-split a merged graph into one extraction per supporting chunk."""
    out: dict[str, Extraction] = {}
    for e in graph.entities.values():
        for cid in sorted(e.source_chunks):
            out.setdefault(cid, ([], []))[0].append(
                Entity(e.key, e.display_name, e.entity_type, e.description, frozenset([cid])))
    for r in graph.relations.values():
        for cid in sorted(r.source_chunks):
            out.setdefault(cid, ([], []))[1].append(
                Relation(r.src, r.dst, r.label, r.description, frozenset([cid])))
    return [out[k] for k in sorted(out)]
