from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgpath.errors import ConfigError
from kgpath.evaluation import GoldExample, context_metrics, grid, load_suite, run_suite, sweep, sweep_csv
from kgpath.retrieval import QueryClass, QueryType

from conftest import SUITE


@pytest.fixture(scope="module")
def suite():
    return load_suite(SUITE)


@pytest.mark.parametrize("retrieved, gold, expected", [
    (["a", "b", "c"], {"a", "c"}, (2 / 3, 1.0)),
    (["a"], {"a", "c"}, (1.0, 0.5)),
    (["x", "y"], {"a"}, (0.0, 0.0)),
    ([], {"a"}, (0.0, 0.0)),
    ([], set(), (1.0, 1.0)),
    (["a", "a", "b"], {"a"}, (0.5, 1.0)),
])
def test_context_metrics_examples(retrieved, gold, expected):
    assert context_metrics(retrieved, gold) == pytest.approx(expected, abs=1e-15)


_ids = st.sampled_from(list("abcdefgh"))


@given(st.lists(_ids, max_size=10), st.sets(_ids, min_size=1))
def test_context_metrics_oracle(retrieved, gold):
    p, r = context_metrics(retrieved, gold)
    uniq = set(retrieved)
    assert r == len(uniq & gold) / len(gold)
    assert p == (len(uniq & gold) / len(uniq) if uniq else 0.0)


def test_load_suite(suite):
    assert [ex.id for ex in suite] == ["marlow-office", "kessler-mentor"]
    assert suite[0].gold_chunk_ids == {"marlow_founding.txt#0", "veltrix_office.txt#0"}
    assert suite[0].query_class.value is QueryType.SCQ


def test_modes_order_recall(fixture_engine, suite):
    recall = {m: run_suite(fixture_engine, suite, m).recall for m in ("full", "no_rerank", "no_plan", "naive")}
    assert recall["full"] == 1.0
    assert recall["full"] > recall["no_rerank"] > recall["no_plan"]
    assert all(0.0 <= v <= 1.0 for v in recall.values())


def test_no_rerank_keeps_intrinsic_order(fixture_engine, suite):
    report = run_suite(fixture_engine, suite, "no_rerank")
    for row in report.rows:
        for node in row.trace["nodes"]:
            assert node["weights"] == {"alpha": 1.0, "beta": 0.0}
            for c in node["candidates_scored"]:
                assert c["combined_score"] == c["intrinsic_score"]
            scores = [c["combined_score"] for c in node["candidates_scored"]]
            assert scores == sorted(scores, reverse=True)


def test_failures_score_zero(fixture_engine):
    bad = [GoldExample("   ", "", frozenset({"marlow_founding.txt#0"}), QueryClass(QueryType.SCQ), "blank")]
    report = run_suite(fixture_engine, bad)
    assert report.rows[0].error and report.recall == 0.0
    assert "failed=1" in report.summary()


def test_unknown_gold_and_mode_rejected(fixture_engine, suite):
    with pytest.raises(ConfigError):
        run_suite(fixture_engine, suite, "bogus")
    ghost = [GoldExample("q", "", frozenset({"ghost#0"}), QueryClass(QueryType.SCQ))]
    with pytest.raises(ConfigError):
        run_suite(fixture_engine, ghost)


def test_grid():
    assert grid(0.25) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert len(grid(0.05)) == 21 and grid(0.05)[7] == 0.35
    for bad in (0, -0.1, 0.3, 1.5):
        with pytest.raises(ConfigError):
            grid(bad)


def test_sweep_endpoint_matches_no_rerank(fixture_engine, suite):
    rows = sweep(fixture_engine, suite, 0.25)
    assert [r["alpha"] for r in rows] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert all(r["alpha"] + r["beta"] == pytest.approx(1.0, abs=1e-12) for r in rows)
    base = run_suite(fixture_engine, suite, "no_rerank")
    assert (rows[-1]["precision"], rows[-1]["recall"]) == (base.precision, base.recall)
    text = sweep_csv(rows)
    assert text.splitlines()[0] == "alpha,beta,precision,recall"
    assert sweep_csv(sweep(fixture_engine, suite, 0.25)) == text


def test_report_csv_is_stable(fixture_engine, suite):
    a = run_suite(fixture_engine, suite, "full", workers=2).to_csv()
    b = run_suite(fixture_engine, suite, "full", workers=1).to_csv()
    assert a == b and a.count("\n") == 3
