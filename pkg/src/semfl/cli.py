"""Command-line pipeline: ``semfl <command> [options]``.

Commands run in order over one workspace directory per bug::

    build-graph -> detect-modules -> extract-knowledge -> index -> localize
    evaluate (over one or more localized workspaces)

Exit codes: 0 success, 1 usage/config, 2 integrity/staleness, 3 backend failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from . import workspace as W
from .backends import MockChatBackend, RemoteChatBackend, RetryPolicy
from .callgraph import CallGraph, build_call_graph, load_invocations, load_method_table, load_tests
from .community import ModulePartition, leiden_detect, repair_module_sizes
from .config import RunConfig
from .errors import (
    BackendError,
    ConfigError,
    ExtractionError,
    IntegrityError,
    ParseError,
    QueryGenError,
    SemflError,
    UndefinedModularityError,
)
from .index import build_indexes, load_indexes, make_embedder, save_indexes
from .knowledge import KnowledgeBase, build_knowledge_base, method_slug
from .metrics import aggregate, load_truth, project_table, table_csv
from .querygen import generate_all
from .retrieval import retrieve_bundle
from .voting import RankedReport, explain_top_k, score_methods

logger = logging.getLogger("semfl")

EXIT_OK, EXIT_USAGE, EXIT_INTEGRITY, EXIT_BACKEND = 0, 1, 2, 3


def chat_backend(cfg: RunConfig):
    retry = RetryPolicy(cfg.chat_max_attempts, cfg.chat_backoff)
    if cfg.chat_kind == "mock":
        return MockChatBackend()
    return RemoteChatBackend(
        cfg.chat_base_url, cfg.chat_model, cfg.temperature, cfg.chat_api_key_env, retry=retry
    )


def embedder(cfg: RunConfig):
    if cfg.embed_kind == "hash":
        return make_embedder("hash", cfg.embed_dim)
    return make_embedder(
        "remote", cfg.embed_dim, base_url=cfg.embed_base_url, model=cfg.embed_model,
        api_key_env=cfg.embed_api_key_env, retry=RetryPolicy(cfg.chat_max_attempts, cfg.chat_backoff),
    )


# --- commands -----------------------------------------------------------------------


def cmd_build_graph(cfg: RunConfig, methods_path: str, calls_path: str) -> CallGraph:
    ws = cfg.ws
    methods = load_method_table(methods_path)
    events = load_invocations(calls_path)
    g = build_call_graph(events, methods, strict=cfg.strict)
    if not g.nodes:
        raise IntegrityError("invocation log covers no known method")
    W.dump_json(ws / W.GRAPH, g.to_json())
    W.write_manifest(
        ws, "build-graph",
        {str(methods_path): W.file_hash(Path(methods_path)), str(calls_path): W.file_hash(Path(calls_path))},
        [W.GRAPH], cfg.config_hash(),
    )
    logger.info("graph: %d nodes, %d edges, %d skipped events", len(g.nodes), len(g.edges), g.skipped_events)
    return g


def _load_graph(ws: Path) -> CallGraph:
    W.require(ws, W.GRAPH)
    return CallGraph.from_json(W.read_json(ws / W.GRAPH))


def cmd_detect_modules(cfg: RunConfig) -> ModulePartition:
    ws = cfg.ws
    g = _load_graph(ws)
    if g.total_weight == 0:
        raise UndefinedModularityError("graph has no edges")
    raw = leiden_detect(g, max_size=cfg.max_size, seed=cfg.seed, randomness=cfg.randomness)
    p = repair_module_sizes(g, raw, cfg.min_size, cfg.max_size)
    W.dump_json(
        ws / W.MODULES,
        p.to_json(seed=cfg.seed, min_size=cfg.min_size, max_size=cfg.max_size, leiden_quality=raw.quality),
    )
    W.write_manifest(ws, "detect-modules", W.workspace_inputs(ws, [W.GRAPH]), [W.MODULES], cfg.config_hash())
    logger.info("modules: %d (Q=%.4f)", len(p.modules), p.quality)
    return p


def cmd_extract_knowledge(cfg: RunConfig, backend=None) -> KnowledgeBase:
    ws = cfg.ws
    g = _load_graph(ws)
    W.require(ws, W.MODULES)
    p = ModulePartition.from_json(W.read_json(ws / W.MODULES))
    kb = build_knowledge_base(
        backend or chat_backend(cfg), g, p, out_dir=ws / W.KB, workers=cfg.workers,
        module_context=not cfg.no_module_context, char_budget=cfg.char_budget,
    )
    W.write_manifest(ws, "extract-knowledge", W.workspace_inputs(ws, [W.GRAPH, W.MODULES]), [W.KB], cfg.config_hash())
    logger.info("knowledge: %d module and %d method reports", len(kb.module_reports), len(kb.method_reports))
    return kb


def cmd_index(cfg: RunConfig, emb=None):
    ws = cfg.ws
    W.require(ws, W.KB)
    kb = KnowledgeBase.load(ws / W.KB)
    e = emb or embedder(cfg)
    indexes = build_indexes(e, kb)
    save_indexes(indexes, ws / W.IDX)
    W.write_manifest(ws, "index", W.workspace_inputs(ws, [W.KB]), [W.IDX], cfg.config_hash())
    logger.info("indexes: %s", {g: len(i) for g, i in indexes.items()})
    return indexes


def cmd_localize(cfg: RunConfig, tests_path: str, backend=None, emb=None) -> RankedReport:
    ws = cfg.ws
    W.require(ws, W.IDX)
    kb = KnowledgeBase.load(ws / W.KB)
    indexes = load_indexes(ws / W.IDX)
    tests = load_tests(Path(tests_path).read_text(encoding="utf-8"))
    if not tests:
        raise IntegrityError("tests document lists no failed test")
    e = emb or embedder(cfg)
    if e.dimension != indexes["method"].dimension:
        raise IntegrityError(
            f"embedder dimension {e.dimension} does not match index dimension {indexes['method'].dimension}; "
            "re-run `semfl index`"
        )
    chat = backend or chat_backend(cfg)

    for stale in (W.TRANSCRIPTS, W.RETRIEVAL):
        shutil.rmtree(ws / stale, ignore_errors=True)
    module_index = None if cfg.no_module_context else indexes["module"]
    results = generate_all(chat, tests, module_index, kb, cfg.max_rounds, e, cfg.workers)
    queries, rows = [], []
    for qs, log in results:
        tpath = f"{W.TRANSCRIPTS}/{method_slug(qs.test_id)}.json"
        W.dump_json(ws / tpath, {"test_id": qs.test_id, "calls": log})
        queries.append(qs)
        rows.append(qs.to_json(tpath))
    W.dump_json(ws / W.QUERIES, rows)

    bundles = []
    for qs in queries:
        b = retrieve_bundle(
            qs, indexes, kb, cfg.top_k, e, cfg.top_k_module, cfg.top_k_chunk,
            module_retrieval=not cfg.no_module_retrieval, chunk_retrieval=not cfg.no_chunk_retrieval,
        )
        b.check(kb, cfg.top_k)
        W.dump_json(ws / W.RETRIEVAL / f"{method_slug(qs.test_id)}.json", b.to_json())
        bundles.append(b)

    report = score_methods(bundles, kb, cfg.resolved_bug_id)
    if cfg.explain_k > 0:
        report = explain_top_k(chat, report, kb, cfg.explain_k, queries)
    W.dump_json(ws / W.REPORT, report.to_json())
    W.write_manifest(
        ws, "localize",
        {**W.workspace_inputs(ws, [W.KB, W.IDX]), str(tests_path): W.file_hash(Path(tests_path))},
        [W.REPORT, W.QUERIES, W.TRANSCRIPTS, W.RETRIEVAL], cfg.config_hash(),
    )
    if report.entries:
        top = report.entries[0]
        logger.info("rank 1: %s (score %.4f)", top.method_id, top.score)
    return report


def cmd_evaluate(cfg: RunConfig, report_dirs: list[str], truth_path: str, out_dir: str | None = None):
    truth = load_truth(Path(truth_path).read_text(encoding="utf-8"))
    reports = []
    for d in report_dirs:
        W.require(Path(d), W.REPORT)
        reports.append(RankedReport.from_json(W.read_json(Path(d) / W.REPORT)))
    ev = aggregate(reports, truth, cfg.recall_size)
    rows = project_table(reports, truth, cfg.recall_size)
    out = Path(out_dir) if out_dir else cfg.ws
    doc = ev.to_json()
    doc["projects"] = rows
    doc["recall_size"] = cfg.recall_size
    W.dump_json(out / W.EVAL_JSON, doc)
    (out / W.EVAL_CSV).write_text(table_csv(rows), encoding="utf-8")
    return ev


# --- argument parsing ---------------------------------------------------------------


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("-w", "--workspace", default=argparse.SUPPRESS, help="workspace directory")
    parent.add_argument("-c", "--config", default=None, help="flat JSON config file")
    for f in dataclasses.fields(RunConfig):
        if f.name == "workspace":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parent.add_argument(flag, dest=f.name, action="store_const", const=True, default=argparse.SUPPRESS)
        else:
            parent.add_argument(flag, dest=f.name, default=argparse.SUPPRESS, metavar=f.name.upper())
    parent.add_argument("-v", "--verbose", action="store_true")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    p = argparse.ArgumentParser(prog="semfl", description="Fault localization as semantic code search.")
    p.add_argument("--version", action="version", version=f"semfl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("build-graph", parents=[parent], help="build the dynamic call graph")
    s.add_argument("--methods", required=True, help="methods.json")
    s.add_argument("--calls", required=True, help="calls.jsonl")
    sub.add_parser("detect-modules", parents=[parent], help="detect and repair functional modules")
    sub.add_parser("extract-knowledge", parents=[parent], help="extract module/method/chunk knowledge")
    sub.add_parser("index", parents=[parent], help="build the embedding indexes")
    s = sub.add_parser("localize", parents=[parent], help="generate queries, retrieve and rank methods")
    s.add_argument("--tests", required=True, help="tests.json with the failed tests")
    s = sub.add_parser("evaluate", parents=[parent], help="Top-N / MFR / MAR over localized workspaces")
    s.add_argument("--truth", required=True, help="truth.json")
    s.add_argument("--report", action="append", default=None, help="localized workspace (repeatable)")
    s.add_argument("--out", default=None, help="output directory (default: workspace)")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig) if hasattr(args, f.name)}
    return RunConfig.from_mapping(overrides, cfg)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        with W.locked(cfg.ws):
            if args.command == "build-graph":
                cmd_build_graph(cfg, args.methods, args.calls)
            elif args.command == "detect-modules":
                cmd_detect_modules(cfg)
            elif args.command == "extract-knowledge":
                cmd_extract_knowledge(cfg)
            elif args.command == "index":
                cmd_index(cfg)
            elif args.command == "localize":
                cmd_localize(cfg, args.tests)
            elif args.command == "evaluate":
                cmd_evaluate(cfg, args.report or [str(cfg.ws)], args.truth, args.out)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (BackendError, ExtractionError, QueryGenError) as exc:
        logger.error("backend failure: %s", exc)
        return EXIT_BACKEND
    except (IntegrityError, ParseError, UndefinedModularityError) as exc:
        logger.error("%s", exc)
        return EXIT_INTEGRITY
    except SemflError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        logger.error("file not found: %s", exc.filename)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
