"""Versioned on-disk index.

Layout of an index directory::

    manifest.json        format version, hashes, counts, seed, embedding dim
    chunks.jsonl         one chunk record per line
    entities.jsonl       one entity record per line
    relations.jsonl      one relation record per line
    communities.jsonl    one community record per line
    embeddings.f32       little-endian float32, row-major
    embeddings.meta      JSON sidecar: rows, dim, row keys
    logs/                query logs and plans

Tables are written into a sibling staging directory which is renamed into
place; the manifest is the last file written. A previous index, if any, is
first renamed aside and deleted only after the new one is published, so a
crash at any point leaves either the previous index, no index, or the new
index, and never a partial one at the published path.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kgpath.community.hierarchy import CommunityHierarchy
from kgpath.errors import (
    CorruptIndexError,
    IntegrityError,
    MigrationNeededError,
    NoIndexError,
)
from kgpath.graph import KnowledgeGraph
from kgpath.index import Index
from kgpath.ingest import Chunk, Document

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
TABLES = ("chunks.jsonl", "entities.jsonl", "relations.jsonl", "communities.jsonl",
          "embeddings.f32", "embeddings.meta")
_STAGING = ".staging-"
_RETIRED = ".retired-"


@dataclass
class IndexManifest:
    version: int
    corpus_hash: str
    embed_dim: int
    leiden_seed: int
    created_at: str
    counts: dict[str, int]
    checksums: dict[str, str]
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "corpus_hash": self.corpus_hash,
            "config_hash": self.config_hash,
            "embed_dim": self.embed_dim,
            "leiden_seed": self.leiden_seed,
            "created_at": self.created_at,
            "counts": dict(self.counts),
            "checksums": dict(self.checksums),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IndexManifest":
        return cls(d["version"], d["corpus_hash"], d["embed_dim"], d["leiden_seed"],
                   d["created_at"], d["counts"], d["checksums"], d.get("config_hash", ""))


def corpus_hash(docs: list[Document]) -> str:
    h = hashlib.sha256()
    for doc in sorted(docs, key=lambda d: d.id):
        for part in (doc.id.encode("utf-8"), doc.body.encode("utf-8")):
            h.update(len(part).to_bytes(8, "little"))
            h.update(part)
    return h.hexdigest()


def config_hash(settings: dict) -> str:
    return hashlib.sha256(json.dumps(settings, sort_keys=True).encode("utf-8")).hexdigest()


def _jsonl(records: list[dict]) -> bytes:
    return b"".join(
        json.dumps(r, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n" for r in records
    )


def serialize_tables(index: Index) -> dict[str, bytes]:
    """Every table's exact bytes; identical indexes give identical bytes."""
    entities, relations = index.graph.records()
    mat = np.ascontiguousarray(index.embeddings, dtype="<f4")
    meta = {"rows": int(mat.shape[0]), "dim": int(mat.shape[1]) if mat.ndim == 2 else 0,
            "dtype": "float32-le", "keys": list(index.embedding_keys)}
    return {
        "chunks.jsonl": _jsonl([index.chunks[c].to_record() for c in sorted(index.chunks)]),
        "entities.jsonl": _jsonl(entities),
        "relations.jsonl": _jsonl(relations),
        "communities.jsonl": _jsonl(index.hierarchy.records()),
        "embeddings.f32": mat.tobytes(order="C"),
        "embeddings.meta": json.dumps(meta, sort_keys=True).encode("utf-8"),
    }


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def cleanup_stale(target: Path) -> None:
    """Remove leftovers of interrupted writes next to ``target``.

    If the published directory is missing but a retired copy exists (crash
    between the two renames), the retired copy is restored.
    """
    parent = target.parent
    if not parent.exists():
        return
    retired = sorted(parent.glob(f"{_RETIRED}{target.name}-*"))
    if not target.exists() and retired:
        os.rename(retired[-1], target)
        logger.warning("restored previous index from %s", retired[-1].name)
        retired = retired[:-1]
    for p in retired + sorted(parent.glob(f"{_STAGING}{target.name}-*")):
        shutil.rmtree(p, ignore_errors=True)


def write_index(
    index: Index,
    out_dir: str | Path,
    corpus: str | list[Document],
    leiden_seed: int = 0,
    settings: dict | None = None,
    fault: Callable[[str], None] | None = None,
) -> IndexManifest:
    """Atomically publish ``index`` at ``out_dir``.

    ``corpus`` is either the document list or its precomputed hash. ``fault``
    is called with a label at every kill point; tests use it to simulate a
    crash by raising.
    """
    hit = fault or (lambda label: None)
    target = Path(out_dir).resolve()
    target.parent.mkdir(parents=True, exist_ok=True)
    cleanup_stale(target)
    index.check()
    tables = serialize_tables(index)
    stamp = f"{os.getpid()}-{time.time_ns()}"
    staging = target.parent / f"{_STAGING}{target.name}-{stamp}"
    staging.mkdir()
    if (target / "logs").is_dir():
        shutil.copytree(target / "logs", staging / "logs")
    else:
        (staging / "logs").mkdir()
    hit("staging-created")
    for name in TABLES:
        data = tables[name]
        with open(staging / name, "wb") as fh:
            half = len(data) // 2
            fh.write(data[:half])
            hit(f"{name}:half")
            fh.write(data[half:])
            fh.flush()
            os.fsync(fh.fileno())
        hit(f"{name}:written")

    manifest = IndexManifest(
        version=FORMAT_VERSION,
        corpus_hash=corpus if isinstance(corpus, str) else corpus_hash(corpus),
        embed_dim=index.embed_dim,
        leiden_seed=leiden_seed,
        created_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        counts={
            "chunks": len(index.chunks),
            "entities": len(index.graph.entities),
            "relations": len(index.graph.relations),
            "communities": len(index.hierarchy.all()),
            "embeddings": len(index.embedding_keys),
        },
        checksums={name: hashlib.sha256(tables[name]).hexdigest() for name in TABLES},
        config_hash=config_hash(settings or {}),
    )
    data = json.dumps(manifest.to_dict(), indent=2, sort_keys=True).encode("utf-8")
    hit("manifest:before")
    with open(staging / "manifest.json", "wb") as fh:
        fh.write(data[: len(data) // 2])
        hit("manifest:half")
        fh.write(data[len(data) // 2:])
        fh.flush()
        os.fsync(fh.fileno())
    _fsync_dir(staging)
    hit("manifest:written")

    retired = None
    if target.exists():
        retired = target.parent / f"{_RETIRED}{target.name}-{stamp}"
        os.rename(target, retired)
        hit("previous-retired")
    os.rename(staging, target)
    _fsync_dir(target.parent)
    hit("published")
    if retired is not None:
        shutil.rmtree(retired, ignore_errors=True)
        hit("retired-removed")
    return manifest


def read_manifest(path: str | Path) -> IndexManifest:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise NoIndexError(f"no index at {path} (manifest.json missing)")
    try:
        raw = json.loads(mpath.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptIndexError(f"unreadable manifest at {mpath}: {exc}") from exc
    version = raw.get("version")
    if version != FORMAT_VERSION:
        raise MigrationNeededError(
            f"index format version {version} needs migration (this build reads {FORMAT_VERSION})")
    try:
        return IndexManifest.from_dict(raw)
    except KeyError as exc:
        raise CorruptIndexError(f"manifest missing field {exc}") from exc


def _load_jsonl(data: bytes) -> list[dict]:
    return [json.loads(line) for line in data.decode("utf-8").splitlines() if line.strip()]


def read_index(path: str | Path) -> tuple[Index, IndexManifest]:
    """Open a published index read-only and verify checksums, counts and integrity."""
    path = Path(path)
    manifest = read_manifest(path)
    raw: dict[str, bytes] = {}
    for name in TABLES:
        try:
            raw[name] = (path / name).read_bytes()
        except OSError as exc:
            raise CorruptIndexError(f"missing table {name}: {exc}") from exc
        if hashlib.sha256(raw[name]).hexdigest() != manifest.checksums.get(name):
            raise CorruptIndexError(f"checksum mismatch in {name}")
    try:
        chunks = [Chunk.from_record(r) for r in _load_jsonl(raw["chunks.jsonl"])]
        graph = KnowledgeGraph.from_records(_load_jsonl(raw["entities.jsonl"]),
                                            _load_jsonl(raw["relations.jsonl"]))
        hierarchy = CommunityHierarchy.from_records(_load_jsonl(raw["communities.jsonl"]))
        meta = json.loads(raw["embeddings.meta"])
        mat = np.frombuffer(raw["embeddings.f32"], dtype="<f4")
        mat = mat.reshape(meta["rows"], meta["dim"]) if meta["rows"] else np.zeros((0, meta["dim"]), "<f4")
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptIndexError(f"malformed table: {exc}") from exc
    index = Index({c.id: c for c in chunks}, graph, hierarchy, list(meta["keys"]), mat.copy())
    counts = {
        "chunks": len(index.chunks),
        "entities": len(graph.entities),
        "relations": len(graph.relations),
        "communities": len(hierarchy.all()),
        "embeddings": len(index.embedding_keys),
    }
    if counts != manifest.counts:
        raise CorruptIndexError(f"table counts {counts} disagree with manifest {manifest.counts}")
    if index.embed_dim != manifest.embed_dim:
        raise CorruptIndexError("embedding dim disagrees with manifest")
    try:
        index.check()
    except IntegrityError as exc:
        raise CorruptIndexError(f"referential integrity violated: {exc}") from exc
    return index, manifest


def append_log(index_dir: str | Path, record: dict) -> Path:
    """Append one query record (plan, answer, trace) to ``logs/queries.jsonl``."""
    logs = Path(index_dir) / "logs"
    logs.mkdir(exist_ok=True)
    path = logs / "queries.jsonl"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    return path
