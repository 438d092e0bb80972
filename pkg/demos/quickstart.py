"""
Index a small corpus and answer a two-hop question
===================================================

Builds an index from the bundled fixture corpus with the deterministic mock
provider, then answers a question that needs two lookups: which company
Alice Marlow founded, and where that company keeps its main office.
"""

from pathlib import Path
import tempfile

import kgpath
from kgpath.config import RunConfig, make_gateway
from kgpath.ingest import load_corpus
from kgpath.pipeline import Engine, build_index
from kgpath.store import read_index, write_index

FIXTURES = Path(kgpath.__file__).parent / "fixtures"
QUESTION = "Which city hosts the main office of the company founded by Alice Marlow?"

# scripted plans tell the mock planner how to split known questions
cfg = RunConfig(plans=[str(FIXTURES / "plans.jsonl")])
llm = make_gateway(cfg)

docs = load_corpus(FIXTURES / "corpus")
index = build_index(docs, llm, cfg)
print(f"{len(docs)} documents -> {len(index.chunks)} chunks, "
      f"{len(index.graph.entities)} entities, {len(index.graph.relations)} relations")
print("communities per level:", [len(level) for level in index.hierarchy.levels])

# publish the index atomically and read it back, as the CLI does
with tempfile.TemporaryDirectory() as tmp:
    manifest = write_index(index, Path(tmp) / "idx", docs, cfg.leiden_seed)
    index, manifest = read_index(Path(tmp) / "idx")
print("embedding dim:", manifest.embed_dim, "corpus hash:", manifest.corpus_hash[:12])

###############################################################################
# Answer the question. The planner produces two sub-questions; the second one
# mentions the first one's answer through a placeholder that is filled in
# before retrieval.

engine = Engine(index, llm, cfg)
final = engine.answer(QUESTION)
for node in final.trace["nodes"]:
    print(f"{node['id']}: {node['text']!r} -> {node['answer']!r}")
print("answer:", final.text)
print("citations:", final.citations)
