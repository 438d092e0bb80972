"""Command line entry point: ``kgpath {index,query,plan,sweep,eval,export}``.

Exit codes:
    0  success
    1  any other library error
    2  bad usage, configuration or input
    3  planning failed (no usable plan, unresolvable placeholders)
    4  retrieval failed
    5  generation failed
    6  index missing, corrupt or in an old format
    7  provider unreachable after retries
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from kgpath.config import MODES, RunConfig, make_gateway
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

logger = logging.getLogger("kgpath")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PLANNING = 3
EXIT_RETRIEVAL = 4
EXIT_GENERATION = 5
EXIT_STORE = 6
EXIT_TRANSPORT = 7

_EXIT_CODES: list[tuple[type[BaseException], int]] = [
    ((ConfigError, InputError), EXIT_USAGE),
    ((PlanningError, SequencingError), EXIT_PLANNING),
    (RetrievalError, EXIT_RETRIEVAL),
    (GenerationError, EXIT_GENERATION),
    ((NoIndexError, MigrationNeededError, CorruptIndexError), EXIT_STORE),
    (TransportError, EXIT_TRANSPORT),
]


def exit_code_for(exc: BaseException) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(exc, types):
            return code
    return EXIT_ERROR


# Settings that change what gets indexed; their hash goes into the manifest.
_INDEX_SETTINGS = ("provider", "llm_model", "embed_model", "max_tokens", "overlap_tokens",
                   "leiden_seed", "resolution_schedule")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="JSON config file (keys are RunConfig field names)")
    g.add_argument("--provider", choices=("mock", "http"))
    g.add_argument("--plans", action="append", metavar="FILE",
                   help="scripted plans for the mock provider (repeatable)")
    g.add_argument("--workers", type=int)
    g.add_argument("-v", "--verbose", action="count", default=0)


def _answer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--no-plan", action="store_true", help="answer the question as a single node")
    p.add_argument("--no-rerank", action="store_true", help="plan but keep intrinsic ranking")
    p.add_argument("--alpha", type=float, help="weight of the intrinsic score")
    p.add_argument("--beta", type=float, help="weight of the dependency similarity")
    p.add_argument("--k-context", type=int, dest="k_context")
    p.add_argument("--level-policy", choices=("auto", "leaf", "top"), dest="level_policy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgpath", description="Graph RAG with planned sub-questions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build an index from a corpus directory")
    p.add_argument("corpus_dir")
    p.add_argument("out_dir")
    p.add_argument("--manifest", help="file listing the documents to include, one per line")
    p.add_argument("--max-tokens", type=int, dest="max_tokens")
    p.add_argument("--overlap", type=int, dest="overlap_tokens")
    p.add_argument("--leiden-seed", type=int, dest="leiden_seed")
    p.add_argument("--skip-unchanged", action="store_true",
                   help="do nothing if the index already matches the corpus and settings")
    _common(p)

    p = sub.add_parser("query", help="answer a question against an index")
    p.add_argument("index_dir")
    p.add_argument("question")
    _answer_flags(p)
    p.add_argument("--explain", action="store_true", help="print per-node retrieval traces")
    p.add_argument("--trace", metavar="FILE", help="write the full answer record as JSON")
    p.add_argument("--json", action="store_true", help="print the answer record as JSON")
    _common(p)

    p = sub.add_parser("plan", help="print the sub-question plan and schedule for a question")
    p.add_argument("question")
    p.add_argument("--index", dest="index_dir", help="also append the plan to this index's logs")
    _common(p)

    p = sub.add_parser("sweep", help="grid alpha/beta over a gold suite and emit CSV")
    p.add_argument("index_dir")
    p.add_argument("suite")
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--out", help="write CSV here instead of stdout")
    _common(p)

    p = sub.add_parser("eval", help="score context precision/recall over a gold suite")
    p.add_argument("index_dir")
    p.add_argument("suite")
    _answer_flags(p)
    p.add_argument("--out", help="write the per-example CSV here")
    _common(p)

    p = sub.add_parser("export", help="write graph and community tables as JSON lines")
    p.add_argument("index_dir")
    p.add_argument("out_dir")
    _common(p)
    return parser


def _mode(args) -> str | None:
    flagged = "no_plan" if args.no_plan else "no_rerank" if args.no_rerank else None
    if args.mode and flagged and args.mode != flagged:
        raise ConfigError(f"--mode {args.mode} conflicts with --{flagged.replace('_', '-')}")
    return args.mode or flagged


def make_config(args) -> RunConfig:
    flags = {k: getattr(args, k, None) for k in (
        "provider", "plans", "workers", "max_tokens", "overlap_tokens", "leiden_seed",
        "alpha", "beta", "k_context", "level_policy", "manifest")}
    if hasattr(args, "mode"):
        flags["mode"] = _mode(args)
    if flags["manifest"] is not None:
        flags["manifest"] = str(Path(flags["manifest"]).resolve())
    if flags["plans"] is not None:
        flags["plans"] = [str(Path(p).resolve()) for p in flags["plans"]]
    return RunConfig.from_sources(flags, args.config)


def _open_engine(cfg: RunConfig, index_dir: str):
    from kgpath.pipeline import Engine
    from kgpath.store import read_index

    index, _ = read_index(index_dir)
    return Engine(index, make_gateway(cfg), cfg)


def cmd_index(args, cfg: RunConfig, out) -> int:
    from kgpath.ingest import LoadReport, load_corpus
    from kgpath.pipeline import IndexReport, build_index
    from kgpath.store import config_hash, corpus_hash, read_manifest, write_index

    report = LoadReport()
    docs = load_corpus(args.corpus_dir, cfg.manifest, report)
    for path, why in report.errors:
        print(f"skipped {path}: {why}", file=sys.stderr)
    if not docs:
        raise InputError(f"no documents under {args.corpus_dir}")
    settings = {k: getattr(cfg, k) for k in _INDEX_SETTINGS}
    chash = corpus_hash(docs)
    if args.skip_unchanged:
        try:
            old = read_manifest(args.out_dir)
        except KgpathError:
            old = None
        if old and old.corpus_hash == chash and old.config_hash == config_hash(settings):
            print(f"unchanged: {args.out_dir} (corpus {chash[:12]})", file=out)
            return EXIT_OK
    llm = make_gateway(cfg)
    ireport = IndexReport()
    index = build_index(docs, llm, cfg, ireport, progress=lambda m: print(m, file=sys.stderr))
    for cid, why in ireport.extraction_failures:
        print(f"extraction failed for {cid}: {why}", file=sys.stderr)
    manifest = write_index(index, args.out_dir, chash, cfg.leiden_seed, settings)
    print(json.dumps({"index": str(Path(args.out_dir).resolve()), **manifest.to_dict()},
                     indent=2, sort_keys=True), file=out)
    return EXIT_OK


def _print_explain(final, out) -> None:
    for node in final.trace.get("nodes", []):
        print(f"-- {node['id']}: {node['text']}", file=out)
        print(f"   class={node.get('class')} weights={node.get('weights')}", file=out)
        if "seeds" in node:
            seeds = ", ".join(f"{k} ({s:.3f})" for k, s in node["seeds"])
            print(f"   seeds: {seeds}", file=out)
        if "level" in node:
            print(f"   community level: {node['level']}", file=out)
        for c in node.get("candidates_scored", []):
            m = "-" if c["similarity_score"] is None else f"{c['similarity_score']:.3f}"
            mark = "*" if c["chunk_id"] in node.get("context", []) else " "
            print(f"   {mark} {c['chunk_id']:<32} R={c['intrinsic_score']:.3f} M={m} "
                  f"score={c['combined_score']:.3f}", file=out)
        print(f"   answer: {node.get('answer')}", file=out)


def cmd_query(args, cfg: RunConfig, out) -> int:
    from kgpath.store import append_log

    engine = _open_engine(cfg, args.index_dir)
    final = engine.answer(args.question)
    record = final.to_record()
    if args.trace:
        Path(args.trace).write_text(json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False),
                                    encoding="utf-8")
    try:
        append_log(args.index_dir, record)
    except OSError as exc:
        logger.warning("could not append query log: %s", exc)
    if args.json:
        print(json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False), file=out)
        return EXIT_OK
    if args.explain:
        _print_explain(final, out)
    print(final.text, file=out)
    print(f"citations: {', '.join(final.citations) or '(none)'}", file=out)
    if final.degraded:
        print("note: some sub-questions could not be resolved", file=out)
    return EXIT_OK


def cmd_plan(args, cfg: RunConfig, out) -> int:
    from kgpath.planner import plan, topo_schedule
    from kgpath.store import append_log

    dag = plan(args.question, make_gateway(cfg))
    record = {**dag.to_record(), "waves": topo_schedule(dag).waves}
    if args.index_dir:
        append_log(args.index_dir, {"plan": record, "config": cfg.to_dict()})
    print(json.dumps(record, indent=2, ensure_ascii=False), file=out)
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig, out) -> int:
    from kgpath.evaluation import load_suite, sweep, sweep_csv

    engine = _open_engine(cfg, args.index_dir)
    text = sweep_csv(sweep(engine, load_suite(args.suite), args.grid_step, cfg.workers))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig, out) -> int:
    from kgpath.evaluation import load_suite, run_suite

    engine = _open_engine(cfg, args.index_dir)
    report = run_suite(engine, load_suite(args.suite), cfg.mode, cfg.workers)
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    print(report.summary(), file=out)
    return EXIT_OK


def cmd_export(args, cfg: RunConfig, out) -> int:
    from kgpath.store import read_index

    index, _ = read_index(args.index_dir)
    dest = Path(args.out_dir)
    dest.mkdir(parents=True, exist_ok=True)
    entities, relations = index.graph.records()
    tables = {"entities.jsonl": entities, "relations.jsonl": relations,
              "communities.jsonl": index.hierarchy.records()}
    for name, rows in tables.items():
        with open(dest / name, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")
        print(f"{dest / name}: {len(rows)} records", file=out)
    return EXIT_OK


COMMANDS = {
    "index": cmd_index,
    "query": cmd_query,
    "plan": cmd_plan,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "export": cmd_export,
}


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](args, cfg, out)
    except KgpathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
