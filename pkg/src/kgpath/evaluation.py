"""Deterministic context precision/recall over labeled evidence chunks."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from kgpath.config import MODES
from kgpath.errors import ConfigError, KgpathError
from kgpath.pipeline import Engine
from kgpath.retrieval import QueryClass, QueryType

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GoldExample:
    question: str
    gold_answer: str
    gold_chunk_ids: frozenset[str]
    query_class: QueryClass
    id: str = ""

    @classmethod
    def from_record(cls, rec: dict, default_id: str = "") -> "GoldExample":
        return cls(
            question=rec["question"],
            gold_answer=rec.get("gold_answer", ""),
            gold_chunk_ids=frozenset(rec.get("gold_chunk_ids", [])),
            query_class=QueryClass(QueryType(rec.get("query_class", "SCQ"))),
            id=rec.get("id", default_id),
        )


def load_suite(path: str | Path) -> list[GoldExample]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if line.strip():
            out.append(GoldExample.from_record(json.loads(line), default_id=f"ex{n}"))
    return out


def context_metrics(retrieved: list[str], gold: set[str] | frozenset[str]) -> tuple[float, float]:
    """Set-based (precision, recall) of retrieved chunk ids against gold ids."""
    seen: list[str] = []
    for r in retrieved:
        if r not in seen:
            seen.append(r)
    hits = len(set(seen) & set(gold))
    if not seen:
        precision = 1.0 if not gold else 0.0
    else:
        precision = hits / len(seen)
    recall = 1.0 if not gold else hits / len(gold)
    return precision, recall


@dataclass
class ExampleResult:
    id: str
    question: str
    precision: float
    recall: float
    retrieved: list[str]
    answer: str = ""
    error: str = ""
    trace: dict = field(default_factory=dict, repr=False)


@dataclass
class SuiteReport:
    mode: str
    rows: list[ExampleResult]

    @property
    def precision(self) -> float:
        return sum(r.precision for r in self.rows) / len(self.rows) if self.rows else 0.0

    @property
    def recall(self) -> float:
        return sum(r.recall for r in self.rows) / len(self.rows) if self.rows else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "mode", "precision", "recall", "retrieved", "error"])
        for r in self.rows:
            w.writerow([r.id, self.mode, repr(r.precision), repr(r.recall), " ".join(r.retrieved), r.error])
        return buf.getvalue()

    def summary(self) -> str:
        failed = sum(1 for r in self.rows if r.error)
        return (
            f"mode={self.mode} examples={len(self.rows)} failed={failed} "
            f"context_precision={self.precision:.4f} context_recall={self.recall:.4f}"
        )


def run_suite(engine: Engine, examples: list[GoldExample], mode: str = "full",
              workers: int = 1) -> SuiteReport:
    """Answer every example in ``mode`` and score the synthesis context.

    The scored context is the knowledge actually handed to the final
    synthesis call. A failing example scores zero and keeps its error text.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    missing = {c for ex in examples for c in ex.gold_chunk_ids} - engine.index.chunks.keys()
    if missing:
        raise ConfigError(f"gold chunk ids not in the index: {sorted(missing)}")

    def one(ex: GoldExample) -> ExampleResult:
        try:
            final = engine.answer(ex.question, mode)
        except KgpathError as exc:
            logger.warning("example %s failed: %s", ex.id, exc)
            return ExampleResult(ex.id, ex.question, 0.0, 0.0, [], error=f"{type(exc).__name__}: {exc}")
        p, r = context_metrics(final.context_ids, ex.gold_chunk_ids)
        return ExampleResult(ex.id, ex.question, p, r, list(final.context_ids), final.text,
                             trace=final.trace)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(one, examples))
    return SuiteReport(mode, rows)


def grid(step: float) -> list[float]:
    if not 0 < step <= 1:
        raise ConfigError("grid step must be in (0, 1]")
    n = round(1.0 / step)
    if abs(n * step - 1.0) > 1e-9:
        raise ConfigError(f"grid step {step} does not divide 1")
    return [round(i / n, 10) for i in range(n + 1)]


def sweep(engine: Engine, examples: list[GoldExample], step: float = 0.05,
          workers: int = 1) -> list[dict]:
    """One full-mode suite run per alpha on the grid, with beta = 1 - alpha."""
    rows = []
    for alpha in grid(step):
        cfg = replace(engine.cfg, alpha=alpha, beta=round(1.0 - alpha, 10))
        report = run_suite(Engine(engine.index, engine.llm, cfg), examples, "full", workers)
        rows.append({"alpha": alpha, "beta": cfg.beta, "precision": report.precision,
                     "recall": report.recall})
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "beta", "precision", "recall"])
    for r in rows:
        w.writerow([repr(r["alpha"]), repr(r["beta"]), repr(r["precision"]), repr(r["recall"])])
    return buf.getvalue()
