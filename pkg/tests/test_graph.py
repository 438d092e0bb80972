from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgpath.errors import IntegrityError
from kgpath.graph import (
    Entity,
    KnowledgeGraph,
    Relation,
    extract,
    extract_all,
    merge,
    parse_extraction,
    split_by_chunk,
)
from kgpath.ingest import Chunk
from kgpath.llm import LLMGateway, MockProvider


def _chunk(cid: str, text: str) -> Chunk:
    return Chunk(cid, cid.split("#")[0], 0, text, len(text.split()))


def test_extract_example(mock_llm):
    ents, rels = extract(_chunk("c#0", "Alice founded Acme."), mock_llm)
    assert sorted(e.key for e in ents) == ["acme", "alice"]
    assert [(r.src, r.dst, r.label) for r in rels] == [("alice", "acme", "founded")]
    assert all(e.source_chunks == {"c#0"} for e in ents)
    assert all(r.source_chunks == {"c#0"} for r in rels)


def test_extract_stopword_chunk_is_empty(mock_llm):
    assert extract(_chunk("c#0", "and the of it"), mock_llm) == ([], [])


def test_extract_dedups_within_chunk(mock_llm):
    ents, _ = extract(_chunk("c#0", "Alice met Bob. Later Alice wrote a book."), mock_llm)
    alice = [e for e in ents if e.key == "alice"]
    assert len(alice) == 1 and alice[0].source_chunks == {"c#0"}


def test_parse_extraction_drops_dangling_and_self_relations():
    ents, rels = parse_extraction({
        "entities": [{"name": "The  Acme", "type": "org"}, {"name": "Bob"}],
        "relations": [
            {"source": "Acme", "target": "Zed", "label": "x"},
            {"source": "Bob", "target": "bob", "label": "self"},
            {"source": "bob", "target": "the acme", "label": "Works At"},
        ],
    }, "c#0")
    assert sorted(e.key for e in ents) == ["acme", "bob"]
    assert [e.entity_type for e in ents if e.key == "acme"] == ["ORG"]
    assert [(r.src, r.dst, r.label) for r in rels] == [("bob", "acme", "works at")]


def test_extract_all_records_failures():
    bad = "```json\nnot json\n```"
    chunk = _chunk("c#0", "Alice founded Acme.")
    import json as _json

    provider = MockProvider(responses={
        ("extract_entities", _json.dumps({"text": chunk.text}, sort_keys=True)): bad})
    llm = LLMGateway(provider, max_attempts=2, backoff=0.0)
    failures = []
    out = extract_all([chunk, _chunk("d#0", "Bob met Carol.")], llm, 2, failures)
    assert out[0] == ([], [])
    assert [f[0] for f in failures] == ["c#0"]
    assert sorted(e.key for e in out[1][0]) == ["bob", "carol"]


def test_merge_unions_sources(mock_llm):
    per = [extract(_chunk(f"c{i}#0", "Alice founded Acme."), mock_llm) for i in (1, 2, 3)]
    g = merge(per)
    assert g.entities["alice"].source_chunks == {"c1#0", "c2#0", "c3#0"}
    rel = g.relations[("alice", "acme", "founded")]
    assert rel.weight == 3


def test_merge_weight_counts_distinct_chunks():
    rel = Relation("a", "b", "r", "", frozenset({"c1"}))
    ents = [Entity("a", "A", "X", "", frozenset({"c1"})), Entity("b", "B", "X", "", frozenset({"c1"}))]
    g = merge([(ents, [rel]), (ents, [rel])])
    assert g.relations[("a", "b", "r")].weight == 1


def test_merge_picks_majority_display_name():
    e = lambda name, cid: Entity("acme", name, "ORG", "", frozenset({cid}))  # noqa: E731
    g = merge([([e("ACME", "c1")], []), ([e("Acme", "c2")], []), ([e("Acme", "c3")], [])])
    assert g.entities["acme"].display_name == "Acme"


def test_merge_summarizes_long_descriptions(mock_llm):
    long = " ".join(f"w{i}" for i in range(1500))
    g = merge([([Entity("a", "A", "X", long, frozenset({"c"}))], [])], mock_llm, description_budget=100)
    assert len(g.entities["a"].description.split()) <= 100


def test_graph_check_catches_dangling_relation():
    g = KnowledgeGraph()
    g.entities["a"] = Entity("a", "A", "X", "", frozenset({"c"}))
    g.relations[("a", "b", "r")] = Relation("a", "b", "r", "", frozenset({"c"}))
    with pytest.raises(IntegrityError):
        g.check()


_names = st.sampled_from(["Alice", "Bob", "Acme", "the Acme", "Zed Corp", "ALICE", "Harbor  Council"])


@st.composite
def extractions(draw):
    out = []
    for i in range(draw(st.integers(1, 8))):
        cid = f"c{i}#0"
        text_ents = draw(st.lists(_names, min_size=0, max_size=4))
        data = {
            "entities": [{"name": n, "type": draw(st.sampled_from(["PERSON", "ORG", "ENTITY"])),
                          "description": draw(st.sampled_from(["", "d1", "d2", "d3"]))}
                         for n in text_ents],
            "relations": [{"source": a, "target": b, "label": draw(st.sampled_from(["x", "y"])),
                           "description": draw(st.sampled_from(["", "r1", "r2"]))}
                          for a in text_ents for b in text_ents],
        }
        out.append(parse_extraction(data, cid))
    return out


@settings(max_examples=100, deadline=None)
@given(per=extractions(), seed=st.integers(0, 2**32 - 1))
def test_merge_order_independent(per, seed):
    shuffled = list(per)
    random.Random(seed).shuffle(shuffled)
    assert merge(per).serialize() == merge(shuffled).serialize()


@settings(max_examples=100, deadline=None)
@given(per=extractions())
def test_merge_union_and_idempotence(per):
    g = merge(per)
    g.check()
    assert set(g.entities) == {e.key for ents, _ in per for e in ents}
    assert merge(split_by_chunk(g)).serialize() == g.serialize()
    for rel in g.relations.values():
        assert rel.weight == len(rel.source_chunks) > 0


@settings(max_examples=50, deadline=None)
@given(a=extractions(), b=extractions())
def test_merge_union_consistency(a, b):
    b = [([Entity(e.key, e.display_name, e.entity_type, e.description,
                  frozenset({"y" + c for c in e.source_chunks})) for e in ents],
          [Relation(r.src, r.dst, r.label, r.description,
                    frozenset({"y" + c for c in r.source_chunks})) for r in rels])
         for ents, rels in b]
    assert set(merge(a + b).entities) == set(merge(a).entities) | set(merge(b).entities)


def test_serialize_round_trip(fixture_index):
    g = fixture_index.graph
    ents, rels = g.records()
    assert KnowledgeGraph.from_records(ents, rels).serialize() == g.serialize()


def test_undirected_weights_symmetric(fixture_index):
    w = fixture_index.graph.undirected_weights()
    for a, nbrs in w.items():
        for b, x in nbrs.items():
            assert w[b][a] == x > 0
