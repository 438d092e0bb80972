"""Deterministic offline provider.

Every response is a pure function of ``(template_id, variables)``:

* entity extraction: capitalized-token NER plus a verb-link heuristic;
* summaries: template echo of the supplied members and details;
* plans: scripted per query, loaded from fixture files, with a
  single-node fallback;
* answers: a digest of the top-ranked context passage.

Embeddings hash tokens into buckets. See :func:`hashed_embedding`.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import numpy as np

from kgpath.errors import ConfigError
from kgpath.llm.gateway import CompletionRequest
from kgpath.text import (
    STOPWORDS,
    canonical_key,
    content_words,
    is_word,
    sentences,
    tokenize,
    truncate_tokens,
)

UNIGRAM_BUCKETS = 256
BIGRAM_BUCKETS = 256
EMBED_DIM = UNIGRAM_BUCKETS + BIGRAM_BUCKETS

ORG_SUFFIXES = frozenset(
    "inc corp corporation company co ltd llc labs lab group university institute "
    "bank foundation agency society association council shipping systems holdings "
    "partners press records studios industries".split()
)
PERSON_VERBS = frozenset(
    "founded cofounded co-founded joined left married leads led met wrote directed "
    "studied mentored hired invented designed owns owned chairs".split()
)
ORG_VERBS = frozenset("founded cofounded joined left acquired leads led hired owns owned".split())
LOCATION_CUES = frozenset(
    "based located headquartered office offices lives lived born moved settled city capital".split()
)
# Capitalized words that open sentences without naming anything.
_NON_ENTITY_CAPS = STOPWORDS | frozenset(
    "later today yesterday meanwhile however although though despite since many several "
    "most some every each across along among around behind beyond near within".split()
)

_CONTEXT_LINE_RE = re.compile(r"^\[(?P<id>[^\]]+)\]\s?(?P<text>.*)$")


def _bucket(token: str, n: int, salt: bytes) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=salt)
    return int.from_bytes(h.digest(), "little") % n


def hashed_embedding(text: str) -> np.ndarray:
    """Hashed bag of lower-cased content tokens plus their adjacent bigrams.

    Unigrams land in the first 256 dimensions and bigrams in the last 256.
    Stopwords and punctuation are skipped unless nothing else remains. The
    result is not normalized; the gateway does that.
    """
    toks = content_words(text)
    if not toks:
        toks = [t.lower() for t in tokenize(text)]
    vec = np.zeros(EMBED_DIM)
    for t in toks:
        vec[_bucket(t, UNIGRAM_BUCKETS, b"uni")] += 1.0
    for a, b in zip(toks, toks[1:]):
        vec[UNIGRAM_BUCKETS + _bucket(f"{a} {b}", BIGRAM_BUCKETS, b"bi")] += 1.0
    return vec


def find_mentions(sentence: str) -> list[tuple[str, int, int]]:
    """Capitalized-token NER over one sentence.

    Returns ``(surface, first_token, end_token)`` for every maximal run of
    capitalized word tokens, after dropping leading function words such as
    "The" or "Which".
    """
    toks = tokenize(sentence)
    out = []
    i = 0
    while i < len(toks):
        if is_word(toks[i]) and toks[i][0].isupper():
            j = i
            while j < len(toks) and is_word(toks[j]) and toks[j][0].isupper():
                j += 1
            start = i
            while start < j and toks[start].lower() in _NON_ENTITY_CAPS:
                start += 1
            if start < j:
                out.append((" ".join(toks[start:j]), start, j))
            i = j
        else:
            i += 1
    return out


def _link(toks: list[str], a: tuple[str, int, int], b: tuple[str, int, int]) -> str | None:
    between = toks[a[2] : b[1]]
    # Commas may separate an appositive; any other punctuation breaks the link.
    if not all(is_word(t) or t == "," for t in between):
        return None
    words = [t.lower() for t in between if is_word(t)]
    if not 1 <= len(words) <= 6:
        return None
    words = [w for w in words if w not in STOPWORDS]
    return " ".join(words) or None


def rule_extract(text: str) -> dict:
    """The mock extraction rules, returned in the extraction template's JSON shape."""
    entities: dict[str, dict] = {}
    relations: dict[tuple[str, str, str], dict] = {}
    for sent in sentences(text):
        toks = tokenize(sent)
        mentions = find_mentions(sent)
        for name, _, _ in mentions:
            key = canonical_key(name)
            ent = entities.setdefault(key, {"name": name, "type": None, "sentences": []})
            if sent not in ent["sentences"]:
                ent["sentences"].append(sent)
        for a, b in zip(mentions, mentions[1:]):
            label = _link(toks, a, b)
            ka, kb = canonical_key(a[0]), canonical_key(b[0])
            if label is None or ka == kb:
                continue
            relations.setdefault((ka, kb, label), {
                "source": entities[ka]["name"],
                "target": entities[kb]["name"],
                "label": label,
                "description": sent,
            })
    for key, ent in entities.items():
        ent["type"] = _entity_type(key, ent["name"], relations)
    return {
        "entities": [
            {"name": e["name"], "type": e["type"], "description": " ".join(e["sentences"])}
            for e in entities.values()
        ],
        "relations": list(relations.values()),
    }


def _entity_type(key: str, name: str, relations: dict) -> str:
    if name.split()[-1].lower() in ORG_SUFFIXES:
        return "ORG"
    for (src, dst, label), _ in sorted(relations.items()):
        verb = label.split()[0]
        if src == key and verb in PERSON_VERBS:
            return "PERSON"
        if dst == key and verb in ORG_VERBS:
            return "ORG"
        if dst == key and LOCATION_CUES & set(label.split()):
            return "LOCATION"
    return "ENTITY"


def question_keys(text: str) -> set[str]:
    return {canonical_key(name) for sent in sentences(text) for name, _, _ in find_mentions(sent)}


def parse_context(block: str) -> list[tuple[str, str]]:
    out = []
    for line in block.splitlines():
        m = _CONTEXT_LINE_RE.match(line.strip())
        if m:
            out.append((m.group("id"), m.group("text")))
    return out


def digest_answer(question: str, passage: str) -> str:
    """Pick the first entity in ``passage`` that the question does not mention.

    Sentences are tried in order of content-word overlap with the question.
    Falls back to the most overlapping sentence itself.
    """
    asked = question_keys(question)
    qwords = set(content_words(question))
    ranked = sorted(
        enumerate(sentences(passage)),
        key=lambda p: (-len(qwords & set(content_words(p[1]))), p[0]),
    )
    for _, sent in ranked:
        for name, _, _ in find_mentions(sent):
            if canonical_key(name) not in asked:
                return name
    return ranked[0][1] if ranked else passage.strip()


class MockProvider:
    """Offline provider whose outputs depend only on the request.

    Args:
        plans: Scripted planner outputs keyed by the exact query text. Values
            are plan dicts (``nodes``/``edges``/``final``) or raw response
            strings, the latter for feeding malformed transcripts.
        responses: Raw overrides keyed by ``(template_id, variables-json)``.
    """

    name = "mock"
    embed_dim = EMBED_DIM

    def __init__(self, plans: dict | None = None, responses: dict | None = None):
        self.plans = dict(plans or {})
        self.responses = dict(responses or {})

    @classmethod
    def from_plan_files(cls, *paths: str | Path) -> "MockProvider":
        plans: dict = {}
        for path in paths:
            plans.update(load_plan_file(path))
        return cls(plans=plans)

    def complete(self, request: CompletionRequest, prompt: str) -> str:
        v = request.variables
        override = self.responses.get(
            (request.template_id, json.dumps(v, sort_keys=True, ensure_ascii=False))
        )
        if override is not None:
            return override
        handler = getattr(self, f"_t_{request.template_id}", None)
        if handler is None:
            raise ConfigError(f"mock provider has no rule for template {request.template_id!r}")
        return handler(v)

    def embed(self, texts: list[str]) -> np.ndarray:
        return np.stack([hashed_embedding(t) for t in texts])

    @staticmethod
    def _fence(obj) -> str:
        return "```json\n" + json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n```"

    def _t_extract_entities(self, v: dict) -> str:
        return self._fence(rule_extract(v["text"]))

    def _t_summarize_description(self, v: dict) -> str:
        return truncate_tokens(" ".join(v["description"].split()), 512)

    def _t_summarize_community(self, v: dict) -> str:
        members = ", ".join(sorted(m.strip() for m in v["members"].splitlines() if m.strip()))
        return f"{members}. {' '.join(v['details'].split())}"

    def _t_plan_query(self, v: dict) -> str:
        scripted = self.plans.get(v["query"].strip())
        if isinstance(scripted, str):
            return scripted
        if scripted is None:
            scripted = {
                "nodes": [{"id": "S1.1", "text": v["query"].strip(), "kind": "standard"}],
                "edges": [],
                "final": "S1.1",
            }
        return self._fence(scripted)

    def _t_classify_query(self, v: dict) -> str:
        names = sorted(question_keys(v["question"]))
        if names:
            return self._fence({"class": "SCQ", "rationale": f"names entities: {', '.join(names)}"})
        return self._fence({"class": "ACQ", "rationale": "no named entities"})

    def _t_answer_subquestion(self, v: dict) -> str:
        ctx = parse_context(v["context"])
        if not ctx:
            return self._fence({"answer": "insufficient evidence", "citations": []})
        top_id, top_text = ctx[0]
        return self._fence({"answer": digest_answer(v["question"], top_text), "citations": [top_id]})

    def _t_synthesize_answer(self, v: dict) -> str:
        resolved = parse_context(v["resolved"])
        knowledge = parse_context(v["knowledge"])
        answer = resolved[-1][1] if resolved else (
            digest_answer(v["query"], knowledge[0][1]) if knowledge else "insufficient evidence"
        )
        citations = [knowledge[0][0]] if knowledge else []
        return self._fence({"answer": answer, "citations": citations})


def load_plan_file(path: str | Path) -> dict:
    """Load scripted plans: a JSON object ``{query: plan}`` or JSON lines of
    ``{"query": ..., "plan": ...}`` (``"raw"`` instead of ``"plan"`` for a
    verbatim response)."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{") and "\n{" not in stripped:
        return {k.strip(): p for k, p in json.loads(text).items()}
    plans = {}
    for line in text.splitlines():
        if line.strip():
            rec = json.loads(line)
            plans[rec["query"].strip()] = rec.get("raw", rec.get("plan"))
    return plans
