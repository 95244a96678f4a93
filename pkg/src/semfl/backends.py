"""Chat-model backends.

``RemoteChatBackend`` speaks the common chat-completions JSON shape over HTTP.
``MockChatBackend`` is a deterministic stand-in that builds its answers from
features of the prompt (names, comments, code tokens, stack frames), so that
the whole pipeline can run offline and reproducibly. ``ScriptedChatBackend``
replays canned replies for tests.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import httpx

from . import prompts
from .errors import BackendError, ConfigError, TransientBackendError

logger = logging.getLogger(__name__)

Message = dict  # {"role": ..., "content": ...}


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: float = 0.5  # seconds, doubled per attempt

    def run(self, fn, on_retry=None):
        last = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                return fn()
            except TransientBackendError as exc:
                last = exc
                if attempt == self.max_attempts:
                    break
                if on_retry:
                    on_retry(attempt, exc)
                if self.backoff:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
        raise BackendError(f"backend failed after {self.max_attempts} attempt(s): {last}") from last


class ChatBackend:
    """Base class: subclasses implement ``_send``; retries live here."""

    kind = "abstract"

    def __init__(self, retry: RetryPolicy | None = None):
        self.retry = retry or RetryPolicy()
        self.calls = 0
        self.retries = 0
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[Message]) -> str:
        with self._lock:
            self.calls += 1

        def bump(attempt, exc):
            with self._lock:
                self.retries += 1
            logger.warning("chat attempt %d failed (%s); retrying", attempt, exc)

        return self.retry.run(lambda: self._send(list(messages)), on_retry=bump)

    def _send(self, messages: list[Message]) -> str:
        raise NotImplementedError

    @property
    def identity(self) -> str:
        """Stable description of what produces the replies; part of checkpoint keys."""
        return self.kind


class RemoteChatBackend(ChatBackend):
    """HTTP chat-completions client. The API key is read from an environment variable."""

    kind = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        temperature: float = 1.0,
        api_key_env: str = "SEMFL_CHAT_API_KEY",
        timeout: float = 120.0,
        retry: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        super().__init__(retry)
        if not base_url:
            raise ConfigError("remote chat backend needs a base URL")
        self.model = model
        self.temperature = temperature
        key = os.environ.get(api_key_env, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport
        )

    @property
    def identity(self) -> str:
        return f"{self.kind}:{self._client.base_url}:{self.model}:{self.temperature}"

    def _send(self, messages):
        body = {"model": self.model, "temperature": self.temperature, "messages": messages}
        try:
            resp = self._client.post("/chat/completions", json=body)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport error: {type(exc).__name__}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            if "choices" in data:
                return data["choices"][0]["message"]["content"]
            return data["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected chat response shape: {exc}") from exc


class ScriptedChatBackend(ChatBackend):
    """Replays replies from a list (exceptions are raised) or a callable."""

    kind = "scripted"

    def __init__(self, replies: Sequence | Callable[[list[Message]], str], retry: RetryPolicy | None = None):
        super().__init__(retry or RetryPolicy(backoff=0))
        self._replies = replies if callable(replies) else list(replies)
        self._pos = 0
        self.transcript: list[list[Message]] = []

    def _send(self, messages):
        self.transcript.append(messages)
        if callable(self._replies):
            return self._replies(messages)
        if self._pos >= len(self._replies):
            raise BackendError("scripted backend ran out of replies")
        item = self._replies[self._pos]
        self._pos += 1
        if isinstance(item, Exception):
            raise item
        return item


# --- deterministic mock -------------------------------------------------------

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")
_FRAME = re.compile(r"at\s+([\w.$]+)\.([\w$<>]+)\(")
_CALL = re.compile(r"\.(\w+)\s*\(")

_STOP = frozenset(
    """a an and the of to in for on is are be by with as or it this that at from
    if else return new int void double float long boolean string char byte short
    public private protected static final class this null true false var let""".split()
)
_JAVA_NOISE = frozenset("java junit org sun jdk lang assert reflect invoke".split())


def split_words(text: str) -> list[str]:
    """Identifier-aware word split: ``applyDiscount`` -> ``['apply', 'discount']``."""
    out = []
    for ident in _IDENT.findall(text):
        for part in _CAMEL.findall(ident):
            w = part.lower()
            if len(w) > 1 and w not in _STOP:
                out.append(w)
    return out


def _unique(words):
    seen, out = set(), []
    for w in words:
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def _section(text: str, heading: str) -> str:
    """Body under a ``## heading`` line, up to the next ``## `` heading."""
    m = re.search(rf"^##\s+{re.escape(heading)}\s*$\n(.*?)(?=^##\s|\Z)", text, re.M | re.S)
    return m.group(1).strip() if m else ""


def _method_name(method_id: str) -> str:
    tail = method_id.split("#")[-1]
    return tail.split("(")[0]


class MockChatBackend(ChatBackend):
    """Deterministic offline backend.

    Output is a pure function of the message list. Replies follow the same
    report and protocol formats a real model is asked for.
    """

    kind = "mock"

    def __init__(self, retry: RetryPolicy | None = None):
        super().__init__(retry or RetryPolicy(backoff=0))

    def _send(self, messages):
        system = messages[0]["content"] if messages and messages[0]["role"] == "system" else ""
        user = "\n".join(m["content"] for m in messages if m["role"] == "user")
        if system == prompts.MODULE_SYSTEM:
            return self._module_report(messages[1]["content"])
        if system == prompts.METHOD_SYSTEM:
            return self._method_report(messages[1]["content"])
        if system == prompts.QUERY_SYSTEM:
            return self._protocol(messages[1]["content"], force=prompts.FORCE_FINAL in user)
        if system == prompts.EXPLAIN_SYSTEM:
            return self._explain(messages[1]["content"])
        return "I can only answer the prompts of this tool."

    # module report: title from member method names, findings one per method
    def _module_report(self, text: str) -> str:
        blocks = re.findall(r"^### (.+)$\nSignature: (.*)$\n(?:.*\n)*?Developer Comment: (.*)$", text, re.M)
        names = [(mid, sig, cmt) for mid, sig, cmt in blocks]
        counts = Counter(w for mid, _, _ in names for w in split_words(_method_name(mid)))
        top = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:3]]
        classes = _unique(mid.split("#")[0].split(".")[-1] for mid, _, _ in names)
        title = " ".join(w.capitalize() for w in top) + " functionality"
        edges = re.findall(r"^(\S+) -> (\S+) \(count=(\d+)\)$", text, re.M)
        summary = (
            f"The module groups {len(names)} methods of {', '.join(classes)}. "
            + (
                "Observed calls: "
                + "; ".join(
                    f"{' '.join(split_words(_method_name(a)))} calls {' '.join(split_words(_method_name(b)))}"
                    for a, b, _ in edges
                )
                + "."
                if edges
                else "No calls were observed between its methods."
            )
        )
        findings = []
        for mid, sig, cmt in names:
            words = " ".join(split_words(_method_name(mid)))
            detail = cmt.strip() if cmt.strip() and cmt.strip() != "(none)" else "no developer comment"
            findings.append(f"- {words}: {detail}")
        return f"# TITLE\n{title}\n\n# SUMMARY\n{summary}\n\n# DETAILED FINDINGS\n" + "\n".join(findings) + "\n"

    def _method_report(self, text: str) -> str:
        code = _section(text, "Method Code")
        comment = _section(text, "Developer Comment")
        context = _section(text, "Module Context")
        lines = code.splitlines()
        header = lines[0] if lines else ""
        m = re.search(r"(\w+)\s*\(", header)
        name_words = split_words(m.group(1)) if m else []
        func = " ".join(name_words).capitalize() or "Method"
        parts = [f"{func}."]
        if comment and comment != "(none)":
            parts.append(comment.strip())
        ctx_title = context.splitlines()[0].strip() if context and context != "(none)" else ""
        if ctx_title:
            parts.append(f"It belongs to the {ctx_title} module.")
        functionality = " ".join(parts)

        body = lines[1:] if len(lines) > 1 else lines
        blocks, cur = [], []
        for ln in body:
            if not ln.strip() or ln.strip() == "}":
                if cur:
                    blocks.append(cur)
                    cur = []
                continue
            cur.append(ln)
        if cur:
            blocks.append(cur)
        paras = []
        for k, block in enumerate(blocks, 1):
            words = _unique(split_words("\n".join(block)))
            if words:
                paras.append(f"Step {k} works with {' '.join(words)}.")
        if not paras:
            paras = [f"{func} in a single statement."]
        return f"# FUNCTIONALITY\n{functionality}\n\n# DESCRIPTION\n" + "\n\n".join(paras) + "\n"

    def _protocol(self, text: str, force: bool) -> str:
        trace = _section(text, "Stack Trace")
        output = _section(text, "Test Output")
        test = _section(text, "Failed Test")
        details = text.split("## Module Details", 1)[1] if "## Module Details" in text else ""
        frames = [
            (cls, meth)
            for cls, meth in _FRAME.findall(trace)
            if not (set(cls.lower().split(".")) & _JAVA_NOISE) and "test" not in cls.lower()
        ]
        inner = frames[0] if frames else ("", "")
        inner_words = split_words(inner[1])
        have_details = "(none yet)" not in details
        if not have_details and not force:
            cls_words = split_words(inner[0].split(".")[-1]) if inner[0] else split_words(test)[:4]
            req = " ".join(_unique(cls_words + inner_words)) or "module exercised by the failing test"
            return json.dumps({"request": f"functionality of {req}"})
        out_words = [] if output == "(not available)" else split_words(output)
        call_words = split_words(" ".join(_CALL.findall(test)))
        name = re.search(r"void\s+(\w+)\s*\(", test)
        name_words = [w for w in split_words(name.group(1)) if w != "test"] if name else []
        titles = re.findall(r"^# TITLE\s*\n(.+)$", details, re.M)
        method_q = " ".join(_unique(inner_words + name_words + call_words + out_words)) or "faulty method"
        module_q = " ".join(_unique(split_words(" ".join(titles)) + split_words(inner[0]) + inner_words)) or method_q
        chunk_q = " ".join(_unique(out_words + inner_words)) or method_q
        return (
            "After reviewing the failure, here is my answer.\n"
            + json.dumps({"module": module_q, "method": method_q, "chunk": chunk_q})
        )

    def _explain(self, text: str) -> str:
        mid = _section(text, "Method")
        rank = _section(text, "Rank")
        func = _section(text, "Functionality").splitlines()
        queries = [q[2:] for q in _section(text, "Queries").splitlines() if q.startswith("- ")]
        shared = sorted(set(split_words(" ".join(func))) & set(split_words(" ".join(queries))))
        return (
            f"{mid} is ranked {rank.split()[0] if rank else '?'}. "
            f"Its summary ({func[0] if func else 'no summary'}) overlaps the suspected fault on: "
            f"{', '.join(shared) if shared else 'no shared terms'}."
        )


def make_chat_backend(kind: str, **kw) -> ChatBackend:
    if kind == "mock":
        return MockChatBackend()
    if kind == "remote":
        return RemoteChatBackend(**kw)
    raise ConfigError(f"unknown chat backend kind {kind!r}")
