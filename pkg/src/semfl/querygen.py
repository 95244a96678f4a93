"""Interactive query generation for one failed test.

Each round the chat backend sees the fault information and either asks for
details about some module (``{"request": ...}``) or answers with three queries
(``{"module", "method", "chunk"}``). A request is served with the most similar
module report not yet shown. The loop is capped at ``max_rounds`` request
rounds followed by one round that insists on an answer, so it never makes more
than ``max_rounds + 1`` backend calls.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from . import prompts
from .backends import ChatBackend, split_words
from .callgraph import FailedTest
from .errors import ArgumentError, ProtocolParseError, QueryGenError
from .index import Embedder, EmbeddingIndex, retrieve
from .knowledge import KnowledgeBase, ModuleReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Request:
    text: str


@dataclass(frozen=True)
class Answer:
    module: str
    method: str
    chunk: str


@dataclass
class FaultInfo:
    test_id: str
    test_code: str
    test_output: str | None = None
    stack_trace: str | None = None
    module_details: list[tuple[str, ModuleReport]] = field(default_factory=list)

    @classmethod
    def from_test(cls, t: FailedTest) -> "FaultInfo":
        return cls(t.test_id, t.test_code, t.test_output, t.stack_trace)

    def add_module(self, module_id: str, report: ModuleReport) -> None:
        if any(mid == module_id for mid, _ in self.module_details):
            raise ArgumentError(f"module {module_id} already in module details")
        self.module_details.append((module_id, report))

    def render(self) -> str:
        details = [
            (mid, f"# TITLE\n{r.title}\n# SUMMARY\n{r.summary}\n# DETAILED FINDINGS\n"
             + "\n".join(f"- {x}" for x in r.detailed_findings))
            for mid, r in self.module_details
        ]
        return prompts.render_fault_prompt(self.test_code, self.test_output, self.stack_trace, details)


@dataclass(frozen=True)
class QuerySet:
    test_id: str
    module: str
    method: str
    chunk: str
    rounds_used: int = 0
    fallback: bool = False

    def __post_init__(self):
        if not all(q and q.strip() for q in (self.module, self.method, self.chunk)):
            raise ArgumentError(f"query set for {self.test_id} has a blank query")

    def to_json(self, transcript_path: str | None = None) -> dict:
        return {
            "test_id": self.test_id,
            "module": self.module,
            "method": self.method,
            "chunk": self.chunk,
            "rounds_used": self.rounds_used,
            "fallback": self.fallback,
            "transcript_path": transcript_path,
        }

    @classmethod
    def from_json(cls, d) -> "QuerySet":
        return cls(d["test_id"], d["module"], d["method"], d["chunk"], int(d["rounds_used"]), bool(d.get("fallback", False)))


def _json_objects(text: str):
    dec = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = dec.raw_decode(text, pos)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            yield obj
        pos = text.find("{", pos + 1)


def parse_protocol_response(text: str) -> Request | Answer:
    """Classify the first JSON object in ``text`` that fits either protocol shape.

    An object carrying all three query fields is an Answer even if it also has
    a ``request`` key.
    """
    for obj in _json_objects(text):
        fields = [obj.get(k) for k in ("module", "method", "chunk")]
        if all(isinstance(f, str) and f.strip() for f in fields):
            return Answer(*(f.strip() for f in fields))
        req = obj.get("request")
        if isinstance(req, str) and req.strip():
            return Request(req.strip())
        break  # the first object decides; later braces are usually nested values
    raise ProtocolParseError(f"no protocol JSON object in response: {text[:200]!r}")


def _fallback_queries(fault: FaultInfo, requests: list[str]) -> str:
    words = split_words(" ".join([*requests, fault.stack_trace or "", fault.test_output or "", fault.test_code]))
    seen, out = set(), []
    for w in words:
        if w not in seen:
            seen.add(w)
            out.append(w)
    return " ".join(out[:64]) or fault.test_id


def generate_queries(
    backend: ChatBackend,
    fault: FaultInfo,
    module_index: EmbeddingIndex | None,
    kb: KnowledgeBase | None,
    max_rounds: int = 5,
    e: Embedder | None = None,
    transcript: list | None = None,
) -> QuerySet:
    """Run the request/answer loop for one failed test.

    When ``module_index`` is None (module context disabled) requests cannot be
    served and the next round demands an answer. If the answer-only round still
    yields no answer, queries are assembled from the request texts and fault
    information and the result is flagged ``fallback``. Two unparseable replies
    in a row raise QueryGenError.
    """
    if max_rounds < 0:
        raise ArgumentError("max_rounds must be >= 0")
    log = transcript if transcript is not None else []
    rounds_used = 0
    requests: list[str] = []
    force = False
    bad_streak = 0
    reminder = None
    for call in range(max_rounds + 1):
        final_call = force or call == max_rounds
        messages = [
            {"role": "system", "content": prompts.QUERY_SYSTEM},
            {"role": "user", "content": fault.render()},
        ]
        if reminder:
            messages.append({"role": "user", "content": reminder})
        if final_call:
            messages.append({"role": "user", "content": prompts.FORCE_FINAL})
        reply = backend.complete(messages)
        entry = {"call": call, "final": final_call, "messages": messages, "reply": reply}
        log.append(entry)
        try:
            parsed = parse_protocol_response(reply)
        except ProtocolParseError as exc:
            bad_streak += 1
            entry["parsed"] = None
            if bad_streak >= 2:
                raise QueryGenError(f"{fault.test_id}: two unparseable replies in a row", log) from exc
            reminder = prompts.PROTOCOL_REMINDER
            if final_call:
                break
            continue
        bad_streak = 0
        reminder = None
        if isinstance(parsed, Answer):
            entry["parsed"] = {"module": parsed.module, "method": parsed.method, "chunk": parsed.chunk}
            return QuerySet(fault.test_id, parsed.module, parsed.method, parsed.chunk, rounds_used)
        entry["parsed"] = {"request": parsed.text}
        requests.append(parsed.text)
        if final_call:
            break
        served = _serve_request(parsed.text, fault, module_index, kb, e)
        if served is None:
            force = True
            continue
        fault.add_module(*served)
        entry["served_module"] = served[0]
        rounds_used += 1

    logger.warning("%s: no answer from the chat backend; using fallback queries", fault.test_id)
    q = _fallback_queries(fault, requests)
    return QuerySet(fault.test_id, q, q, q, rounds_used, fallback=True)


def _serve_request(text, fault, module_index, kb, e):
    if module_index is None or kb is None:
        return None
    seen = {mid for mid, _ in fault.module_details}
    unseen = module_index.restrict(i for i in module_index.ids if i not in seen)
    if len(unseen) == 0:
        return None
    (mid, _), = retrieve(unseen, text, 1, e)
    return mid, kb.module_reports[mid]


def generate_all(
    backend: ChatBackend,
    tests: Sequence[FailedTest],
    module_index: EmbeddingIndex | None,
    kb: KnowledgeBase | None,
    max_rounds: int = 5,
    e: Embedder | None = None,
    workers: int = 4,
) -> list[tuple[QuerySet, list]]:
    """Independent loops per failed test; results in test_id order."""

    def one(t):
        log: list = []
        qs = generate_queries(backend, FaultInfo.from_test(t), module_index, kb, max_rounds, e, log)
        return qs, log

    ordered = sorted(tests, key=lambda t: t.test_id)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, ordered))
