from __future__ import annotations

from pathlib import Path

import pytest

from kgpath.config import RunConfig, make_gateway
from kgpath.ingest import load_corpus
from kgpath.llm import LLMGateway, MockProvider
from kgpath.pipeline import Engine, build_index

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "kgpath" / "fixtures"
CORPUS = FIXTURES / "corpus"
PLANS = FIXTURES / "plans.jsonl"
SUITE = FIXTURES / "suite.jsonl"

MARLOW_Q = "Which city hosts the main office of the company founded by Alice Marlow?"
KESSLER_Q = "What instrument does the mentor of Bruno Kessler play?"
COMPARE_Q = "Which came first: the company founded by Alice Marlow or the Riverside Festival?"


@pytest.fixture
def mock_llm() -> LLMGateway:
    return LLMGateway(MockProvider(), backoff=0.0)


@pytest.fixture(scope="session")
def fixture_config() -> RunConfig:
    return RunConfig(plans=[str(PLANS)])


@pytest.fixture(scope="session")
def fixture_docs():
    return load_corpus(CORPUS)


@pytest.fixture(scope="session")
def fixture_index(fixture_docs, fixture_config):
    return build_index(fixture_docs, make_gateway(fixture_config), fixture_config)


@pytest.fixture
def fixture_engine(fixture_index, fixture_config) -> Engine:
    return Engine(fixture_index, make_gateway(fixture_config), fixture_config)


# criterion number -> (passed, description, seconds); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str, float]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc, secs = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {desc} ({secs:.2f}s)")
