from __future__ import annotations

import hashlib
import json
import math
import re
import threading
import time
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgpath.errors import ConfigError, ExtractionError, InputError, TransportError
from kgpath.llm import (
    CompletionRequest,
    HTTPProvider,
    LLMGateway,
    MockProvider,
    RateLimiter,
    Template,
    TemplateRegistry,
    TransientError,
    cosine,
    parse_json_block,
)
from kgpath.llm.mock import digest_answer, load_plan_file, rule_extract



def _oracle_vector(text: str) -> Counter:
    """Bucket counts recomputed from scratch: blake2b over lower-cased content words."""
    from kgpath.text import STOPWORDS

    words = [w.lower() for w in re.findall(r"\w+", text) if w.lower() not in STOPWORDS]

    def bucket(tok: str, salt: bytes) -> int:
        return int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8, person=salt).digest(),
                              "little") % 256

    c = Counter(bucket(w, b"uni") for w in words)
    c.update(256 + bucket(f"{a} {b}", b"bi") for a, b in zip(words, words[1:]))
    return c


def _oracle_cosine(x: str, y: str) -> float:
    a, b = _oracle_vector(x), _oracle_vector(y)
    dot = sum(a[k] * b[k] for k in a)
    return dot / math.sqrt(sum(v * v for v in a.values()) * sum(v * v for v in b.values()))


class FlakyProvider:
    name = "flaky"
    embed_dim = 4

    def __init__(self, failures: int, response: str = "```json\n{\"ok\": 1}\n```", exc=TransientError):
        self.failures = failures
        self.response = response
        self.exc = exc
        self.calls = 0

    def complete(self, request, prompt):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc("boom")
        return self.response

    def embed(self, texts):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc("boom")
        return np.ones((len(texts), self.embed_dim))


def test_mock_extraction_example(mock_llm):
    resp = mock_llm.complete(CompletionRequest("extract_entities", {"text": "Alice founded Acme."}))
    types = {e["name"]: e["type"] for e in resp.data["entities"]}
    assert types == {"Alice": "PERSON", "Acme": "ORG"}
    assert [(r["source"], r["label"], r["target"]) for r in resp.data["relations"]] == [
        ("Alice", "founded", "Acme")]


def test_mock_extraction_of_stopwords_is_empty():
    assert rule_extract("the and of it is") == {"entities": [], "relations": []}


def test_missing_variables_is_config_error(mock_llm):
    with pytest.raises(ConfigError):
        mock_llm.complete(CompletionRequest("extract_entities", {}))


def test_unknown_template_is_config_error(mock_llm):
    with pytest.raises(ConfigError):
        mock_llm.complete(CompletionRequest("no_such_template", {}))


def test_mock_is_byte_identical(mock_llm):
    req = CompletionRequest("extract_entities", {"text": "Clara Voss mentored Bruno Kessler."})
    a = MockProvider().complete(req, "")
    b = MockProvider().complete(req, "")
    assert a == b
    assert mock_llm.complete(req) == mock_llm.complete(req)


def test_request_digest_stable_and_sensitive():
    a = CompletionRequest("t", {"x": "1", "y": "2"})
    assert a.digest() == CompletionRequest("t", {"y": "2", "x": "1"}).digest()
    assert a.digest() != CompletionRequest("t", {"x": "1", "y": "3"}).digest()


def test_embed_determinism_and_norm(mock_llm):
    a = mock_llm.embed(["x"])[0]
    b = mock_llm.embed(["x"])[0]
    assert np.array_equal(a.values, b.values)
    assert a.dim == 512
    assert abs(np.linalg.norm(a.values) - 1.0) < 1e-6


def test_self_similarity(mock_llm):
    m = mock_llm.embed_matrix(["the red cat", "the red cat"])
    assert abs(cosine(m[0], m[1]) - 1.0) < 1e-9


def test_lexical_similarity_ordering(mock_llm):
    m = mock_llm.embed_matrix(["red cat", "blue dog", "red cats"])
    far, near = cosine(m[0], m[1]), cosine(m[0], m[2])
    assert far < near
    assert abs(far - _oracle_cosine("red cat", "blue dog")) < 1e-12
    assert abs(near - _oracle_cosine("red cat", "red cats")) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="abcde fgh", min_size=1, max_size=60).filter(lambda s: re.search(r"\w", s)),
       st.text(alphabet="abcde fgh", min_size=1, max_size=60).filter(lambda s: re.search(r"\w", s)))
def test_embedding_cosine_matches_oracle(x, y):
    from kgpath.text import content_words

    if not content_words(x) or not content_words(y):
        return
    llm = LLMGateway(MockProvider())
    m = llm.embed_matrix([x, y])
    assert abs(cosine(m[0], m[1]) - _oracle_cosine(x, y)) < 1e-9
    assert np.all(np.abs(np.linalg.norm(m, axis=1) - 1.0) < 1e-6)


def test_embed_rejects_empty_text(mock_llm):
    with pytest.raises(InputError):
        mock_llm.embed(["ok", "  "])


def test_embed_dimension_mismatch(mock_llm):
    mock_llm.expected_dim = 1024
    with pytest.raises(ConfigError):
        mock_llm.embed(["x"])


def test_parse_json_block_variants():
    assert parse_json_block('```json\n{"a": 1}\n```') == {"a": 1}
    assert parse_json_block('{"a": 2}') == {"a": 2}
    assert parse_json_block('Sure! {"a": 3} hope that helps') == {"a": 3}
    with pytest.raises(ExtractionError) as info:
        parse_json_block("no json here")
    assert info.value.raw == "no json here"


def test_retries_transient_then_succeeds():
    p = FlakyProvider(failures=2)
    gw = LLMGateway(p, max_attempts=3, backoff=0.0)
    assert gw.complete(CompletionRequest("classify_query", {"question": "q"})).data == {"ok": 1}
    assert p.calls == 3


def test_retry_cap_is_respected():
    p = FlakyProvider(failures=10)
    gw = LLMGateway(p, max_attempts=3, backoff=0.0)
    with pytest.raises(TransportError):
        gw.complete(CompletionRequest("classify_query", {"question": "q"}))
    assert p.calls == 3
    assert gw.log.records[-1].attempts == 3 and not gw.log.records[-1].ok


def test_parse_failure_after_retries_carries_raw():
    p = FlakyProvider(failures=0, response="not json at all")
    gw = LLMGateway(p, max_attempts=2, backoff=0.0)
    with pytest.raises(ExtractionError) as info:
        gw.complete(CompletionRequest("classify_query", {"question": "q"}))
    assert info.value.raw == "not json at all"
    assert p.calls == 2


def test_permanent_transport_error_is_not_retried():
    p = FlakyProvider(failures=5, exc=TransportError)
    gw = LLMGateway(p, max_attempts=3, backoff=0.0)
    with pytest.raises(TransportError):
        gw.complete(CompletionRequest("classify_query", {"question": "q"}))
    assert p.calls == 1


def test_backoff_is_exponential(monkeypatch):
    waits = []
    monkeypatch.setattr("kgpath.llm.gateway.time.sleep", waits.append)
    gw = LLMGateway(FlakyProvider(failures=3), max_attempts=4, backoff=0.5)
    gw.complete(CompletionRequest("classify_query", {"question": "q"}))
    assert waits == [0.5, 1.0, 2.0]


def test_embed_retries_transient():
    p = FlakyProvider(failures=1)
    gw = LLMGateway(p, max_attempts=2, backoff=0.0)
    assert gw.embed_matrix(["a"]).shape == (1, 4)


def test_rate_limiter_spaces_calls():
    limiter = RateLimiter(50.0)
    t0 = time.monotonic()
    threads = [threading.Thread(target=limiter.acquire) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert time.monotonic() - t0 >= 5 * 0.02 * 0.9
    RateLimiter(None).acquire()


def test_template_parse_and_render():
    t = Template.parse("x", "#! output: json\n#! version: 3\nHello {{ name }} and {{other}}")
    assert t.output == "json" and t.version == "3"
    assert t.placeholders == {"name", "other"}
    assert t.render({"name": "A", "other": "B"}) == "Hello A and B"
    with pytest.raises(ConfigError):
        Template.parse("y", "#! output: yaml\nbody")


def test_builtin_templates_present():
    reg = TemplateRegistry.builtin()
    assert set(reg.ids()) >= {"extract_entities", "summarize_description", "summarize_community",
                              "plan_query", "classify_query", "answer_subquestion",
                              "synthesize_answer"}


def test_template_dir_overrides(tmp_path):
    (tmp_path / "classify_query.txt").write_text("#! output: json\nQ={{question}}", encoding="utf-8")
    reg = TemplateRegistry.from_dir(tmp_path)
    assert reg.get("classify_query").body == "Q={{question}}"
    assert "plan_query" in reg


def test_digest_answer_picks_unasked_entity():
    assert digest_answer("Who founded Acme?", "Alice founded Acme.") == "Alice"
    assert digest_answer("Which company did Alice Marlow found?",
                         "Alice Marlow founded the company Veltrix in 2003.") == "Veltrix"


def test_mock_answer_cites_top_chunk(mock_llm):
    resp = mock_llm.complete(CompletionRequest("answer_subquestion", {
        "question": "Who founded Acme?", "context": "[c1] Alice founded Acme.\n[c2] Bob met Carol."}))
    assert resp.data == {"answer": "Alice", "citations": ["c1"]}


def test_plan_file_formats(tmp_path):
    jsonl = tmp_path / "p.jsonl"
    jsonl.write_text(json.dumps({"query": "Q1", "plan": {"nodes": []}}) + "\n"
                     + json.dumps({"query": "Q2", "raw": "garbage"}) + "\n", encoding="utf-8")
    assert load_plan_file(jsonl) == {"Q1": {"nodes": []}, "Q2": "garbage"}
    obj = tmp_path / "p.json"
    obj.write_text(json.dumps({" Q3 ": {"nodes": []}}), encoding="utf-8")
    assert load_plan_file(obj) == {"Q3": {"nodes": []}}


class _Handler(BaseHTTPRequestHandler):
    fail_first = 0
    seen: list = []

    def log_message(self, *args):
        pass

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((self.path, self.headers.get("Authorization"), body))
        if type(self).fail_first > 0:
            type(self).fail_first -= 1
            self.send_response(503)
            self.end_headers()
            self.wfile.write(b"busy")
            return
        if self.path.endswith("/chat/completions"):
            out = {"choices": [{"message": {"content": '```json\n{"class": "ACQ"}\n```'}}]}
        elif self.path.endswith("/embeddings"):
            out = {"data": [{"index": i, "embedding": [float(i + 1), 0.0, 1.0]}
                            for i in range(len(body["input"]))][::-1]}
        else:
            self.send_response(404)
            self.end_headers()
            return
        data = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture
def http_server():
    _Handler.seen = []
    _Handler.fail_first = 0
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()


def test_http_provider_round_trip(http_server):
    provider = HTTPProvider(http_server, api_key="k3y", model="m", embed_model="e", embed_dim=3)
    gw = LLMGateway(provider, backoff=0.0)
    assert gw.complete(CompletionRequest("classify_query", {"question": "q"})).data == {"class": "ACQ"}
    path, auth, body = _Handler.seen[0]
    assert path == "/v1/chat/completions" and auth == "Bearer k3y"
    assert body["model"] == "m" and body["temperature"] == 0.0
    m = gw.embed_matrix(["a", "b"])
    assert np.allclose(m[0], np.array([1, 0, 1]) / math.sqrt(2))
    assert np.allclose(m[1], np.array([2, 0, 1]) / math.sqrt(5))


def test_http_provider_retries_503(http_server):
    _Handler.fail_first = 2
    gw = LLMGateway(HTTPProvider(http_server, embed_dim=3), max_attempts=3, backoff=0.0)
    assert gw.complete(CompletionRequest("classify_query", {"question": "q"})).data == {"class": "ACQ"}
    assert len(_Handler.seen) == 3


def test_http_provider_dimension_mismatch(http_server):
    gw = LLMGateway(HTTPProvider(http_server, embed_dim=1024), backoff=0.0)
    with pytest.raises(ConfigError):
        gw.embed_matrix(["a"])


def test_http_provider_unreachable():
    gw = LLMGateway(HTTPProvider("http://127.0.0.1:9", timeout=0.5), max_attempts=2, backoff=0.0)
    with pytest.raises(TransportError):
        gw.complete(CompletionRequest("classify_query", {"question": "q"}))


def test_http_provider_from_env():
    p = HTTPProvider.from_env({"PANKRAG_LLM_BASE_URL": "http://x/", "PANKRAG_LLM_API_KEY": "s",
                               "PANKRAG_LLM_MODEL": "mm", "PANKRAG_EMBED_MODEL": "ee"})
    assert (p.base_url, p.api_key, p.model, p.embed_model) == ("http://x", "s", "mm", "ee")
    with pytest.raises(ConfigError):
        HTTPProvider.from_env({})
