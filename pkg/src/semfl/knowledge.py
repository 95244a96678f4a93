"""Natural-language knowledge base at module, method and chunk granularity.

Module reports are produced first, one per functional module, from a textual
rendering of the module's call subgraph. Each method report is then produced
with its module's report as context. A method report's DESCRIPTION paragraphs
become that method's chunks, so chunk ids are ``(method_id, ordinal)`` pairs.

On disk::

    kb/modules/<module_id>.json
    kb/methods/<slug>.json
    kb/maps.json          # method_module (method -> module), method_chunks (method -> chunk ids)
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import prompts
from .backends import ChatBackend
from .callgraph import CallGraph, MethodRef
from .community import FunctionalModule, ModulePartition
from .errors import ExtractionError, IntegrityError

logger = logging.getLogger(__name__)

ChunkId = tuple[str, int]

DEFAULT_CHAR_BUDGET = 24_000


@dataclass(frozen=True)
class ModuleReport:
    module_id: str
    title: str
    summary: str
    detailed_findings: tuple[str, ...]

    def __post_init__(self):
        if not self.title.strip() or not self.summary.strip() or not self.detailed_findings:
            raise ExtractionError(f"module report {self.module_id}: empty section")

    @property
    def text(self) -> str:
        """Document embedded for the module index."""
        return "\n".join([self.title, self.summary, *self.detailed_findings])

    def to_json(self) -> dict:
        d = asdict(self)
        d["detailed_findings"] = list(self.detailed_findings)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "ModuleReport":
        return cls(d["module_id"], d["title"], d["summary"], tuple(d["detailed_findings"]))


@dataclass(frozen=True)
class MethodReport:
    method_id: str
    functionality: str
    chunk_descriptions: tuple[str, ...]

    def __post_init__(self):
        if not self.functionality.strip() or not self.chunk_descriptions:
            raise ExtractionError(f"method report {self.method_id}: empty section")

    def to_json(self) -> dict:
        return {
            "method_id": self.method_id,
            "functionality": self.functionality,
            "chunk_descriptions": list(self.chunk_descriptions),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "MethodReport":
        return cls(d["method_id"], d["functionality"], tuple(d["chunk_descriptions"]))


# --- serialization --------------------------------------------------------------


def _one_line(s: str | None) -> str:
    return " ".join(s.split()) if s and s.strip() else "(none)"


def serialize_module(
    g: CallGraph,
    module: FunctionalModule,
    methods: Mapping[str, MethodRef] | None = None,
    char_budget: int | None = DEFAULT_CHAR_BUDGET,
) -> str:
    """Render a module's call subgraph as prompt text.

    Members are listed by id, edges lexicographically. If the text exceeds
    ``char_budget``, code bodies are elided longest first; signatures and
    comments are always kept.
    """
    table = methods if methods is not None else g.methods
    members = sorted(module.members)
    missing = [m for m in members if m not in table]
    if missing:
        raise IntegrityError(f"module {module.module_id}: unresolvable member(s) {missing}")
    edges = sorted(module.internal_edges) if module.internal_edges else g.edges_within(members)
    elided: set[str] = set()

    def render() -> str:
        out = [f"Module {module.module_id}: {len(members)} method(s), {len(edges)} call edge(s)", "", "## Methods"]
        for mid in members:
            m = table[mid]
            if mid in elided:
                n = m.end_line - m.start_line + 1
                code = f"(code elided: {n} line(s))"
            else:
                code = m.code.rstrip("\n")
            out += [
                f"### {mid}",
                f"Signature: {m.signature}",
                f"Location: {m.file_path}:{m.start_line}-{m.end_line}",
                f"Developer Comment: {_one_line(m.comment)}",
                "Code:",
                code,
                "",
            ]
        out.append("## Call Edges")
        if edges:
            out += [f"{a} -> {b} (count={w})" for a, b, w in edges]
        else:
            out.append("none")
        return "\n".join(out) + "\n"

    text = render()
    if char_budget:
        for mid in sorted(members, key=lambda x: (-len(table[x].code), x)):
            if len(text) <= char_budget:
                break
            elided.add(mid)
            text = render()
    return text


# --- parsing ----------------------------------------------------------------------

_HEADING = re.compile(r"^\s*(?:#{1,6}\s*)?(?:\*\*)?\s*([A-Za-z][A-Za-z ]*?)\s*(?:\*\*)?\s*:?\s*$")


def _split_sections(text: str, names: Sequence[str]) -> dict[str, str]:
    """Split text on heading lines naming one of ``names`` (case-insensitive).

    Headings may be markdown (``# TITLE``), bold (``**Title**``) or plain with
    a trailing colon. Text before the first heading is ignored.
    """
    wanted = {n.lower(): n for n in names}
    found: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = _HEADING.match(line)
        key = m.group(1).strip().lower() if m else None
        if key in wanted:
            current = wanted[key]
            found.setdefault(current, [])
            continue
        if current is not None:
            found[current].append(line)
    return {k: "\n".join(v).strip() for k, v in found.items()}


_BULLET = re.compile(r"^\s*(?:[-*+•]|\d+[.)])\s+")


def _items(body: str) -> list[str]:
    """Paragraphs separated by blank lines; bullet/numbered lines are items too."""
    items: list[str] = []
    cur: list[str] = []
    for line in body.splitlines():
        if not line.strip():
            if cur:
                items.append(" ".join(cur))
                cur = []
        elif _BULLET.match(line):
            if cur:
                items.append(" ".join(cur))
            cur = [_BULLET.sub("", line).strip()]
        else:
            cur.append(line.strip())
    if cur:
        items.append(" ".join(cur))
    return [i for i in items if i]


def parse_module_report(module_id: str, text: str) -> ModuleReport:
    secs = _split_sections(text, ("TITLE", "SUMMARY", "DETAILED FINDINGS"))
    missing = [s for s in ("TITLE", "SUMMARY", "DETAILED FINDINGS") if not secs.get(s)]
    if missing:
        raise ExtractionError(f"module report missing section(s): {', '.join(missing)}", text)
    title = " ".join(secs["TITLE"].split())
    return ModuleReport(module_id, title, secs["SUMMARY"], tuple(_items(secs["DETAILED FINDINGS"])))


def parse_method_report(method_id: str, text: str) -> MethodReport:
    secs = _split_sections(text, ("FUNCTIONALITY", "DESCRIPTION"))
    missing = [s for s in ("FUNCTIONALITY", "DESCRIPTION") if not secs.get(s)]
    if missing:
        raise ExtractionError(f"method report missing section(s): {', '.join(missing)}", text)
    return MethodReport(method_id, secs["FUNCTIONALITY"], tuple(_items(secs["DESCRIPTION"])))


def _ask(backend: ChatBackend, system: str, user: str, parse):
    """One request plus one format re-prompt before giving up."""
    messages = [{"role": "system", "content": system}, {"role": "user", "content": user}]
    reply = backend.complete(messages)
    try:
        return parse(reply)
    except ExtractionError:
        logger.info("report did not parse; re-prompting once")
    messages += [{"role": "assistant", "content": reply}, {"role": "user", "content": prompts.FORMAT_REMINDER}]
    reply = backend.complete(messages)
    return parse(reply)


def extract_module_report(backend: ChatBackend, module_id: str, serialized: str) -> ModuleReport:
    if not serialized.strip():
        raise ExtractionError("empty module serialization")
    return _ask(backend, prompts.MODULE_SYSTEM, serialized, lambda r: parse_module_report(module_id, r))


def method_prompt(method: MethodRef, module_context: ModuleReport | None) -> str:
    ctx = f"{module_context.title}\n{module_context.summary}" if module_context else None
    return prompts.render_method_prompt(method.code.rstrip("\n"), method.comment, ctx)


def extract_method_report(
    backend: ChatBackend, method: MethodRef, module_context: ModuleReport | None
) -> MethodReport:
    """Method + chunk knowledge for one method. ``module_context=None`` omits the context."""
    return _ask(
        backend, prompts.METHOD_SYSTEM, method_prompt(method, module_context),
        lambda r: parse_method_report(method.id, r),
    )


# --- knowledge base -----------------------------------------------------------------


def method_slug(method_id: str) -> str:
    """Filesystem-safe, collision-free file stem for a method id."""
    readable = re.sub(r"[^A-Za-z0-9._-]+", "_", method_id)[:80]
    return f"{readable}-{hashlib.sha1(method_id.encode()).hexdigest()[:12]}"


def _dump(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _input_hash(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode())
        h.update(b"\0")
    return h.hexdigest()


@dataclass
class KnowledgeBase:
    module_reports: dict[str, ModuleReport]
    method_reports: dict[str, MethodReport]
    method_module: dict[str, str]

    @property
    def method_chunks(self) -> dict[str, list[ChunkId]]:
        return {m: self.chunks_of(m) for m in sorted(self.method_reports)}

    def chunks_of(self, method_id: str) -> list[ChunkId]:
        return [(method_id, k) for k in range(len(self.method_reports[method_id].chunk_descriptions))]

    def chunk_text(self, chunk: ChunkId) -> str:
        mid, k = chunk
        return self.method_reports[mid].chunk_descriptions[k]

    def module_text(self, module_id: str) -> str:
        return self.module_reports[module_id].text

    def method_text(self, method_id: str) -> str:
        return self.method_reports[method_id].functionality

    def knowledge_triple(self, method_id: str) -> tuple[str, str, list[str]]:
        return (
            self.module_text(self.method_module[method_id]),
            self.method_text(method_id),
            [self.chunk_text(c) for c in self.chunks_of(method_id)],
        )

    def validate(self) -> None:
        if set(self.method_module) != set(self.method_reports):
            raise IntegrityError("method_module and method reports cover different methods")
        bad = sorted({g for g in self.method_module.values() if g not in self.module_reports})
        if bad:
            raise IntegrityError(f"method_module references module(s) without a report: {bad}")

    def save(self, root: str | Path) -> None:
        root = Path(root)
        (root / "modules").mkdir(parents=True, exist_ok=True)
        (root / "methods").mkdir(parents=True, exist_ok=True)
        for mid, r in self.module_reports.items():
            _dump(root / "modules" / f"{mid}.json", r.to_json())
        for mid, r in self.method_reports.items():
            _dump(root / "methods" / f"{method_slug(mid)}.json", r.to_json())
        self._save_maps(root)

    def _save_maps(self, root: Path) -> None:
        _dump(
            root / "maps.json",
            {
                "method_module": dict(sorted(self.method_module.items())),
                "method_chunks": {m: [list(c) for c in cs] for m, cs in self.method_chunks.items()},
            },
        )

    @classmethod
    def load(cls, root: str | Path) -> "KnowledgeBase":
        root = Path(root)
        maps = json.loads((root / "maps.json").read_text(encoding="utf-8"))
        modules = {}
        for mid in sorted(set(maps["method_module"].values())):
            modules[mid] = ModuleReport.from_json(json.loads((root / "modules" / f"{mid}.json").read_text()))
        methods = {}
        for m in sorted(maps["method_module"]):
            methods[m] = MethodReport.from_json(json.loads((root / "methods" / f"{method_slug(m)}.json").read_text()))
        kb = cls(modules, methods, dict(maps["method_module"]))
        kb.validate()
        stored = {m: [tuple(c) for c in cs] for m, cs in maps["method_chunks"].items()}
        if stored != kb.method_chunks:
            raise IntegrityError("maps.json method_chunks disagrees with method reports")
        return kb


def _load_checkpoint(path: Path, key: str, loader):
    """Return a previously written report if its recorded input hash matches."""
    if not path.exists():
        return None
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("input_hash") != key:
            return None
        return loader(doc)
    except (ValueError, KeyError, ExtractionError):
        return None


def build_knowledge_base(
    backend: ChatBackend,
    g: CallGraph,
    partition: ModulePartition,
    methods: Mapping[str, MethodRef] | None = None,
    out_dir: str | Path | None = None,
    workers: int = 4,
    module_context: bool = True,
    char_budget: int | None = DEFAULT_CHAR_BUDGET,
) -> KnowledgeBase:
    """Extract every module report, then every method report, checkpointing to ``out_dir``.

    Reports already on disk whose input hash matches are reused, so an
    interrupted build resumes where it stopped. An extraction failure aborts
    after the in-flight requests finish; completed reports stay on disk.
    """
    table = dict(methods) if methods is not None else dict(g.methods)
    uncovered = sorted(n for n in g.nodes if n not in table)
    if uncovered:
        raise IntegrityError(f"no metadata for covered method(s): {uncovered[:5]}")
    if set(partition.assignment) != set(g.nodes):
        raise IntegrityError("partition does not cover exactly the graph's nodes")
    root = Path(out_dir) if out_dir is not None else None
    if root is not None:
        (root / "modules").mkdir(parents=True, exist_ok=True)
        (root / "methods").mkdir(parents=True, exist_ok=True)

    module_reports: dict[str, ModuleReport] = {}
    for fm in partition.functional_modules(g):
        text = serialize_module(g, fm, table, char_budget)
        key = _input_hash(backend.identity, prompts.MODULE_SYSTEM, text)
        path = root / "modules" / f"{fm.module_id}.json" if root else None
        report = _load_checkpoint(path, key, ModuleReport.from_json) if path else None
        if report is None:
            report = extract_module_report(backend, fm.module_id, text)
            if path:
                _dump(path, {**report.to_json(), "input_hash": key})
        module_reports[fm.module_id] = report

    method_module = {m: partition.assignment[m] for m in sorted(g.nodes)}
    method_reports: dict[str, MethodReport] = {}
    todo = []
    for mid in sorted(g.nodes):
        ctx = module_reports[method_module[mid]] if module_context else None
        key = _input_hash(backend.identity, prompts.METHOD_SYSTEM, method_prompt(table[mid], ctx))
        path = root / "methods" / f"{method_slug(mid)}.json" if root else None
        report = _load_checkpoint(path, key, MethodReport.from_json) if path else None
        if report is None:
            todo.append((mid, ctx, key, path))
        else:
            method_reports[mid] = report
    logger.info("method reports: %d cached, %d to extract", len(method_reports), len(todo))

    failure = None
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {pool.submit(extract_method_report, backend, table[mid], ctx): (mid, key, path)
                   for mid, ctx, key, path in todo}
        _, pending = wait(futures, return_when=FIRST_EXCEPTION)
        for f in pending:
            f.cancel()
    for f in sorted(futures, key=lambda f: futures[f][0]):
        mid, key, path = futures[f]
        if f.cancelled():
            continue
        exc = f.exception()
        if exc is not None:
            failure = failure or exc
            continue
        method_reports[mid] = f.result()
        if path:
            _dump(path, {**f.result().to_json(), "input_hash": key})
    if failure is not None:
        raise failure

    kb = KnowledgeBase(module_reports, dict(sorted(method_reports.items())), method_module)
    kb.validate()
    if root is not None:
        kb._save_maps(root)
    return kb
