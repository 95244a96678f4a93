"""Dynamic call graph built from method invocation logs.

Inputs are two documents produced by an instrumentation agent:

* ``methods.json``: array of method records (id, signature, file, lines, code,
  optional comment).
* ``calls.jsonl``: one invocation per line, ``{"caller", "callee"}`` with an
  optional pre-aggregated ``"count"``.

Only methods that show up in at least one invocation are kept as graph nodes.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Mapping

from .errors import IntegrityError, ParseError

logger = logging.getLogger(__name__)

_METHOD_FIELDS = ("id", "signature", "file", "start_line", "end_line", "code")


@dataclass(frozen=True)
class MethodRef:
    id: str
    signature: str
    file_path: str
    start_line: int
    end_line: int
    code: str
    comment: str | None = None

    def __post_init__(self):
        if self.start_line < 1 or self.end_line < self.start_line:
            raise IntegrityError(
                f"method {self.id!r}: bad line range {self.start_line}-{self.end_line}"
            )

    def to_json(self) -> dict:
        d = asdict(self)
        d["file"] = d.pop("file_path")
        return d

    @classmethod
    def from_json(cls, rec: Mapping) -> "MethodRef":
        return cls(
            id=rec["id"],
            signature=rec["signature"],
            file_path=rec["file"],
            start_line=int(rec["start_line"]),
            end_line=int(rec["end_line"]),
            code=rec["code"],
            comment=rec.get("comment"),
        )


def ingest_method_table(document: str | list) -> list[MethodRef]:
    """Parse a ``methods.json`` document into MethodRefs.

    Records with an empty code body are dropped (abstract or native methods have
    nothing to localize). Duplicate ids raise IntegrityError.
    """
    if isinstance(document, str):
        try:
            records = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"methods document is not valid JSON: {exc}") from exc
    else:
        records = document
    if not isinstance(records, list):
        raise ParseError("methods document must be a JSON array")

    methods: list[MethodRef] = []
    seen: set[str] = set()
    for pos, rec in enumerate(records):
        label = f"record {pos}" + (f" ({rec.get('id')!r})" if isinstance(rec, dict) else "")
        if not isinstance(rec, dict):
            raise ParseError(f"{label}: expected an object")
        missing = [k for k in _METHOD_FIELDS if k not in rec]
        if missing:
            raise ParseError(f"{label}: missing field(s) {', '.join(missing)}")
        if not isinstance(rec["id"], str) or not rec["id"]:
            raise ParseError(f"{label}: id must be a non-empty string")
        if not isinstance(rec["code"], str):
            raise ParseError(f"{label}: code must be a string")
        comment = rec.get("comment")
        if comment is not None and not isinstance(comment, str):
            raise ParseError(f"{label}: comment must be a string or null")
        if rec["id"] in seen:
            raise IntegrityError(f"duplicate method id {rec['id']!r}")
        seen.add(rec["id"])
        if not rec["code"].strip():
            logger.debug("dropping bodiless method %s", rec["id"])
            continue
        try:
            methods.append(MethodRef.from_json(rec))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{label}: {exc}") from exc
    return methods


@dataclass(frozen=True)
class Invocation:
    caller: str
    callee: str
    count: int = 1


def parse_invocations(lines: Iterable[str]) -> Iterator[Invocation]:
    """Yield invocation records from ``calls.jsonl`` lines (blank lines skipped)."""
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            count = int(rec.get("count", 1))
            inv = Invocation(str(rec["caller"]), str(rec["callee"]), count)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"calls line {lineno}: {exc}") from exc
        if inv.count < 1:
            raise ParseError(f"calls line {lineno}: count must be >= 1")
        yield inv


@dataclass(frozen=True)
class CallGraph:
    """Weighted directed call graph restricted to covered methods.

    ``edges`` maps (caller, callee) to an invocation count. ``methods`` holds the
    metadata of every node. Treat instances as immutable.
    """

    nodes: frozenset[str]
    edges: Mapping[tuple[str, str], int]
    methods: Mapping[str, MethodRef] = field(repr=False)
    skipped_events: int = 0
    unknown_ids: tuple[str, ...] = ()

    @property
    def total_weight(self) -> int:
        return sum(self.edges.values())

    def sorted_nodes(self) -> list[str]:
        return sorted(self.nodes)

    def edges_within(self, members: Iterable[str]) -> list[tuple[str, str, int]]:
        ms = set(members)
        return sorted((a, b, w) for (a, b), w in self.edges.items() if a in ms and b in ms)

    def to_json(self) -> dict:
        return {
            "nodes": self.sorted_nodes(),
            "edges": [
                {"caller": a, "callee": b, "weight": w} for (a, b), w in sorted(self.edges.items())
            ],
            "methods": [self.methods[m].to_json() for m in self.sorted_nodes()],
            "skipped_events": self.skipped_events,
            "unknown_ids": list(self.unknown_ids),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "CallGraph":
        methods = {m["id"]: MethodRef.from_json(m) for m in doc["methods"]}
        edges = {(e["caller"], e["callee"]): int(e["weight"]) for e in doc["edges"]}
        nodes = frozenset(doc["nodes"])
        if set(methods) != nodes:
            raise IntegrityError("graph document: method table does not match node set")
        return cls(
            nodes=nodes,
            edges=edges,
            methods=methods,
            skipped_events=int(doc.get("skipped_events", 0)),
            unknown_ids=tuple(doc.get("unknown_ids", ())),
        )


def build_call_graph(
    events: Iterable[Invocation | tuple[str, str]],
    methods: Iterable[MethodRef],
    strict: bool = False,
) -> CallGraph:
    """Count invocations into a CallGraph.

    Events may be Invocation records or bare ``(caller, callee)`` pairs. Events
    naming an unknown method are an IntegrityError when ``strict``; otherwise
    they are skipped and tallied on the result. An empty event stream is an
    error in strict mode, since a failing run must cover some code.
    """
    table = {m.id: m for m in methods}
    counts: Counter[tuple[str, str]] = Counter()
    skipped = 0
    unknown: set[str] = set()
    for ev in events:
        if not isinstance(ev, Invocation):
            ev = Invocation(*ev)
        missing = [x for x in (ev.caller, ev.callee) if x not in table]
        if missing:
            if strict:
                raise IntegrityError(f"invocation references unknown method(s): {missing}")
            skipped += ev.count
            unknown.update(missing)
            continue
        counts[(ev.caller, ev.callee)] += ev.count

    if skipped:
        logger.warning("skipped %d invocation(s) touching %d unknown id(s)", skipped, len(unknown))
    if strict and not counts:
        raise IntegrityError("no invocations recorded; a failing run must cover code")

    nodes = frozenset(x for pair in counts for x in pair)
    return CallGraph(
        nodes=nodes,
        edges=dict(sorted(counts.items())),
        methods={m: table[m] for m in sorted(nodes)},
        skipped_events=skipped,
        unknown_ids=tuple(sorted(unknown)),
    )


@dataclass(frozen=True)
class SymmetricWeights:
    """Undirected weight view ``w'(i, j) = w(i, j) + w(j, i)``.

    ``adj[i][j]`` holds w'(i, j); a self-loop a->a of weight x is stored as 2x.
    """

    adj: Mapping[str, Mapping[str, float]]

    @property
    def nodes(self) -> list[str]:
        return sorted(self.adj)

    def weight(self, i: str, j: str) -> float:
        return self.adj.get(i, {}).get(j, 0.0)

    def degree(self, i: str) -> float:
        return sum(self.adj.get(i, {}).values())

    @property
    def total(self) -> float:
        return sum(sum(row.values()) for row in self.adj.values())

    def scaled(self, alpha: float) -> "SymmetricWeights":
        return SymmetricWeights({i: {j: alpha * w for j, w in row.items()} for i, row in self.adj.items()})


def symmetrized_view(g: CallGraph | Mapping[tuple[str, str], float], nodes: Iterable[str] = ()) -> SymmetricWeights:
    """Symmetrize a directed weight map for modularity computations."""
    edges = g.edges if isinstance(g, CallGraph) else g
    adj: dict[str, dict[str, float]] = defaultdict(dict)
    for n in (g.nodes if isinstance(g, CallGraph) else nodes):
        adj[n]
    for (a, b), w in edges.items():
        adj[a][b] = adj[a].get(b, 0.0) + w
        adj[b][a] = adj[b].get(a, 0.0) + w
    return SymmetricWeights({k: dict(v) for k, v in adj.items()})


def load_method_table(path) -> list[MethodRef]:
    with open(path, encoding="utf-8") as fh:
        return ingest_method_table(fh.read())


def load_invocations(path) -> list[Invocation]:
    with open(path, encoding="utf-8") as fh:
        return list(parse_invocations(fh))


@dataclass(frozen=True)
class FailedTest:
    test_id: str
    test_code: str
    test_output: str | None = None
    stack_trace: str | None = None


def load_tests(document: str | list) -> list[FailedTest]:
    """Parse a ``tests.json`` document."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"tests document is not valid JSON: {exc}") from exc
    if not isinstance(document, list):
        raise ParseError("tests document must be a JSON array")
    tests = []
    for pos, rec in enumerate(document):
        try:
            tests.append(
                FailedTest(
                    test_id=str(rec["test_id"]),
                    test_code=str(rec["test_code"]),
                    test_output=rec.get("test_output"),
                    stack_trace=rec.get("stack_trace"),
                )
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ParseError(f"tests record {pos}: {exc}") from exc
    ids = [t.test_id for t in tests]
    if len(ids) != len(set(ids)):
        raise IntegrityError("duplicate test_id in tests document")
    return tests
