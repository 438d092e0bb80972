from __future__ import annotations

import io
import json

import pytest

from kgpath.cli import exit_code_for, main
from kgpath.errors import (
    ConfigError,
    CorruptIndexError,
    GenerationError,
    InputError,
    KgpathError,
    MigrationNeededError,
    NoIndexError,
    PlanningError,
    RetrievalError,
    SequencingError,
    TransportError,
)

from conftest import COMPARE_Q, CORPUS, MARLOW_Q, PLANS, SUITE


def run(*argv) -> tuple[int, str]:
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


@pytest.fixture(scope="module")
def index_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "idx"
    code, text = run("index", CORPUS, path, "--plans", PLANS)
    assert code == 0
    return path, json.loads(text)


def test_index_manifest_counts(index_dir):
    _, manifest = index_dir
    assert manifest["counts"] == {"chunks": 20, "entities": 23, "relations": 20,
                                  "communities": 11, "embeddings": 54}
    assert manifest["embed_dim"] == 512 and manifest["version"] == 1


def test_skip_unchanged(index_dir):
    path, _ = index_dir
    code, text = run("index", CORPUS, path, "--skip-unchanged")
    assert code == 0 and text.startswith("unchanged")
    code, text = run("index", CORPUS, path, "--skip-unchanged", "--leiden-seed", "4")
    assert code == 0 and not text.startswith("unchanged")
    run("index", CORPUS, path)


def test_empty_corpus(tmp_path, capsys):
    (tmp_path / "corpus").mkdir()
    code, _ = run("index", tmp_path / "corpus", tmp_path / "idx")
    assert code == 2
    assert "no documents" in capsys.readouterr().err


def test_query_cites_both_hops(index_dir):
    path, _ = index_dir
    code, text = run("query", path, MARLOW_Q, "--plans", PLANS)
    assert code == 0
    cites = text.strip().splitlines()[-1]
    assert "marlow_founding.txt#0" in cites and "veltrix_office.txt#0" in cites
    code, text = run("query", path, MARLOW_Q, "--plans", PLANS, "--no-plan")
    assert code == 0
    assert "veltrix_office.txt#0" not in text.strip().splitlines()[-1]


def test_query_json_trace_and_explain(index_dir, tmp_path):
    path, _ = index_dir
    trace = tmp_path / "t.json"
    code, text = run("query", path, MARLOW_Q, "--plans", PLANS, "--json", "--trace", trace)
    assert code == 0
    record = json.loads(text)
    assert record == json.loads(trace.read_text())
    assert [n["id"] for n in record["trace"]["nodes"]] == ["S1.1", "S1.2"]
    code, text = run("query", path, MARLOW_Q, "--plans", PLANS, "--explain")
    assert "-- S1.2:" in text and "seeds:" in text and "R=" in text
    logs = (path / "logs" / "queries.jsonl").read_text().splitlines()
    assert len(logs) >= 3


@pytest.mark.parametrize("flags", [
    ["--alpha", "0.7", "--beta", "0.4"],
    ["--alpha", "1.5", "--beta", "-0.5"],
    ["--mode", "full", "--no-plan"],
    ["--k-context", "0"],
])
def test_bad_settings_exit_2(index_dir, flags):
    path, _ = index_dir
    code, _ = run("query", path, MARLOW_Q, *flags)
    assert code == 2


def test_missing_index_exit_6(tmp_path):
    assert run("query", tmp_path / "nope", "Who?")[0] == 6


def test_plan_command(index_dir):
    path, _ = index_dir
    code, text = run("plan", COMPARE_Q, "--plans", PLANS, "--index", path)
    assert code == 0
    record = json.loads(text)
    assert record["waves"] == [["S0.1"], ["S1.1", "S2.1"], ["S1.2"], ["S3.1"]]


def test_sweep_and_eval(index_dir, tmp_path):
    path, _ = index_dir
    code, text = run("sweep", path, SUITE, "--plans", PLANS, "--grid-step", "0.25")
    assert code == 0
    rows = text.strip().splitlines()
    assert rows[0] == "alpha,beta,precision,recall" and len(rows) == 6
    assert run("sweep", path, SUITE, "--grid-step", "0.3")[0] == 2
    code, text = run("eval", path, SUITE, "--plans", PLANS, "--out", tmp_path / "e.csv")
    assert code == 0 and "context_recall=1.0000" in text
    code, text = run("eval", path, SUITE, "--plans", PLANS, "--no-plan")
    assert "mode=no_plan" in text and "context_recall=0.2500" in text
    assert (tmp_path / "e.csv").read_text().count("\n") == 3


def test_export(index_dir, tmp_path):
    path, manifest = index_dir
    code, text = run("export", path, tmp_path / "out")
    assert code == 0
    lines = (tmp_path / "out" / "entities.jsonl").read_text().splitlines()
    assert len(lines) == manifest["counts"]["entities"]


def test_config_precedence(index_dir, tmp_path):
    path, _ = index_dir
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.7, "beta": 0.4}))
    assert run("query", path, MARLOW_Q, "--config", cfg)[0] == 2
    code, text = run("query", path, MARLOW_Q, "--config", cfg, "--plans", PLANS,
                     "--alpha", "0.5", "--beta", "0.5", "--json")
    assert code == 0
    assert json.loads(text)["trace"]["config"]["alpha"] == 0.5
    cfg.write_text(json.dumps({"not_a_key": 1}))
    assert run("query", path, MARLOW_Q, "--config", cfg)[0] == 2


@pytest.mark.parametrize("exc, code", [
    (ConfigError("x"), 2), (InputError("x"), 2), (PlanningError("x"), 3), (SequencingError("x"), 3),
    (RetrievalError("x"), 4), (GenerationError("x"), 5), (NoIndexError("x"), 6),
    (CorruptIndexError("x"), 6), (MigrationNeededError("x"), 6), (TransportError("x"), 7),
    (KgpathError("x"), 1),
])
def test_exit_code_mapping(exc, code):
    assert exit_code_for(exc) == code


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["query"])
    assert info.value.code == 2
