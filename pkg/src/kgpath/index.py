"""In-memory index: chunks, graph, community hierarchy and their embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kgpath.community.hierarchy import CommunityHierarchy
from kgpath.errors import IntegrityError
from kgpath.graph import KnowledgeGraph
from kgpath.ingest import Chunk
from kgpath.llm.gateway import LLMGateway


def entity_text(graph: KnowledgeGraph, key: str) -> str:
    e = graph.entities[key]
    return f"{e.display_name}: {e.description}" if e.description else e.display_name


@dataclass
class Index:
    chunks: dict[str, Chunk]
    graph: KnowledgeGraph
    hierarchy: CommunityHierarchy
    embedding_keys: list[str] = field(default_factory=list)
    embeddings: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    _rows: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._rows = {k: i for i, k in enumerate(self.embedding_keys)}

    @property
    def embed_dim(self) -> int:
        return int(self.embeddings.shape[1]) if self.embeddings.ndim == 2 else 0

    def vector(self, key: str) -> np.ndarray:
        return self.embeddings[self._rows[key]]

    def matrix(self, keys: list[str]) -> np.ndarray:
        if not keys:
            return np.zeros((0, self.embed_dim))
        return self.embeddings[[self._rows[k] for k in keys]]

    def has_vector(self, key: str) -> bool:
        return key in self._rows

    def embed(self, llm: LLMGateway) -> None:
        """(Re)compute embeddings for every chunk, entity and community summary."""
        keys, texts = [], []
        for cid in sorted(self.chunks):
            keys.append(f"chunk:{cid}")
            texts.append(self.chunks[cid].text)
        for key in sorted(self.graph.entities):
            keys.append(f"entity:{key}")
            texts.append(entity_text(self.graph, key))
        for c in self.hierarchy.all():
            if c.summary.strip():
                keys.append(f"community:{c.id}")
                texts.append(c.summary)
        self.embedding_keys = keys
        self.embeddings = llm.embed_matrix(texts).astype(np.float32)
        self._rows = {k: i for i, k in enumerate(keys)}

    def check(self) -> None:
        """Referential integrity across tables."""
        self.graph.check()
        for e in self.graph.entities.values():
            missing = e.source_chunks - self.chunks.keys()
            if missing:
                raise IntegrityError(f"entity {e.key!r} cites unknown chunks {sorted(missing)}")
        for r in self.graph.relations.values():
            if r.source_chunks - self.chunks.keys():
                raise IntegrityError(f"relation {r.triple} cites unknown chunks")
        comms = self.hierarchy.by_id()
        seen: set[str] = set()
        for c in self.hierarchy.levels[0] if self.hierarchy.levels else []:
            if c.members & seen:
                raise IntegrityError(f"community {c.id} overlaps another level-0 community")
            seen |= c.members
        if self.hierarchy.levels and seen != set(self.graph.entities):
            raise IntegrityError("level-0 communities do not cover the entity set")
        for c in comms.values():
            if c.level > 0:
                for m in c.members:
                    if m not in comms or comms[m].parent != c.id:
                        raise IntegrityError(f"community {c.id} has inconsistent child {m!r}")
            if c.parent is not None and (c.parent not in comms or c.id not in comms[c.parent].members):
                raise IntegrityError(f"community {c.id} has inconsistent parent")
        if len(self._rows) != len(self.embedding_keys):
            raise IntegrityError("duplicate embedding keys")
        if self.embeddings.shape[0] != len(self.embedding_keys):
            raise IntegrityError("embedding rows do not match embedding keys")
