import json
import logging
import os

import httpx
import pytest

from semfl import prompts
from semfl.backends import MockChatBackend, RemoteChatBackend, RetryPolicy, ScriptedChatBackend
from semfl.callgraph import build_call_graph, ingest_method_table, parse_invocations
from semfl.community import FunctionalModule, ModulePartition, detect_modules
from semfl.errors import BackendError, ExtractionError, IntegrityError, TransientBackendError
from semfl.knowledge import (
    KnowledgeBase,
    build_knowledge_base,
    extract_method_report,
    extract_module_report,
    method_prompt,
    parse_method_report,
    parse_module_report,
    serialize_module,
)

from conftest import GOLDEN

MODULE_REPLY = """TITLE
Cart totals

SUMMARY
Computes cart totals.

DETAILED FINDINGS
- subtotal sums prices
- checkout applies discounts
"""

METHOD_REPLY = """FUNCTIONALITY
Adds two numbers.

DESCRIPTION
Reads both operands.

Returns their sum.
"""


def rec(mid, code="int f() {\n  return 1;\n}", comment=None, end=3):
    return {"id": mid, "signature": f"int {mid}()", "file": "F.java", "start_line": 1,
            "end_line": end, "code": code, "comment": comment}


@pytest.fixture
def toy_graph(toy_dir):
    methods = ingest_method_table((toy_dir / "methods.json").read_text())
    with open(toy_dir / "calls.jsonl") as fh:
        return build_call_graph(parse_invocations(fh), methods)


def small_graph():
    methods = ingest_method_table([rec("a", comment="first"), rec("b"), rec("c")])
    return build_call_graph([("a", "b"), ("b", "c"), ("a", "b")], methods)


# --- serialization --------------------------------------------------------------


def test_serialize_lists_members_and_edges():
    g = small_graph()
    text = serialize_module(g, FunctionalModule("M000", ("a", "b", "c"), ()))
    assert text.index("### a") < text.index("### b") < text.index("### c")
    assert "a -> b (count=2)" in text and "b -> c (count=1)" in text
    assert "Developer Comment: first" in text
    assert "Developer Comment: (none)" in text
    assert text == serialize_module(g, FunctionalModule("M000", ("c", "a", "b"), ()))


def test_serialize_edgeless_module():
    g = small_graph()
    text = serialize_module(g, FunctionalModule("M001", ("c",), ()))
    assert text.rstrip().endswith("## Call Edges\nnone")


def test_serialize_unknown_member():
    with pytest.raises(IntegrityError):
        serialize_module(small_graph(), FunctionalModule("M000", ("zzz",), ()))


def test_serialize_budget_elides_longest_code_first():
    long_code = "int f() {\n" + "  x++;\n" * 200 + "}"
    methods = ingest_method_table([rec("a"), rec("b", code=long_code, end=202), rec("c")])
    g = build_call_graph([("a", "b"), ("b", "c")], methods)
    fm = FunctionalModule("M000", ("a", "b", "c"), ())
    full = serialize_module(g, fm, char_budget=None)
    cut = serialize_module(g, fm, char_budget=len(full) - 10)
    assert "(code elided: 202 line(s))" in cut
    assert cut.count("code elided") == 1
    assert "Signature: int b()" in cut


def test_serialize_golden(toy_graph):
    p = detect_modules(toy_graph, seed=42)
    fm = p.functional_modules(toy_graph)[0]
    check_golden("module_M000.txt", serialize_module(toy_graph, fm))


def check_golden(name, text):
    path = GOLDEN / name
    if os.environ.get("SEMFL_REGEN_GOLDEN"):
        path.parent.mkdir(exist_ok=True)
        path.write_text(text, encoding="utf-8")
    assert text == path.read_text(encoding="utf-8")


# --- parsing --------------------------------------------------------------------


def test_parse_module_report():
    r = parse_module_report("M000", MODULE_REPLY)
    assert r.title == "Cart totals"
    assert r.detailed_findings == ("subtotal sums prices", "checkout applies discounts")
    assert "Computes cart totals." in r.text


@pytest.mark.parametrize(
    "reply",
    [
        "## Functionality\nAdds.\n\n## Description\nStep one.\n\nStep two.",
        "**FUNCTIONALITY**\nAdds.\n**DESCRIPTION**\n1. Step one.\n2. Step two.",
        "Functionality:\nAdds.\nDescription:\n- Step one.\n- Step two.",
    ],
)
def test_parse_method_report_heading_styles(reply):
    r = parse_method_report("a", reply)
    assert r.functionality == "Adds."
    assert r.chunk_descriptions == ("Step one.", "Step two.")


@pytest.mark.parametrize("reply", ["", "FUNCTIONALITY\nAdds.", "DESCRIPTION\nx", "just prose"])
def test_parse_method_report_missing_sections(reply):
    with pytest.raises(ExtractionError):
        parse_method_report("a", reply)


def test_unparseable_twice_raises_with_raw_reply():
    backend = ScriptedChatBackend(["garbage", "more garbage"])
    with pytest.raises(ExtractionError) as ei:
        extract_module_report(backend, "M000", "Module M000")
    assert ei.value.raw_response == "more garbage"
    assert backend.transcript[1][-1]["content"] == prompts.FORMAT_REMINDER


def test_reprompt_recovers():
    backend = ScriptedChatBackend(["garbage", MODULE_REPLY])
    assert extract_module_report(backend, "M000", "Module M000").title == "Cart totals"


# --- backends ---------------------------------------------------------------------


def test_retry_on_rate_limit():
    backend = ScriptedChatBackend([TransientBackendError("HTTP 429"), METHOD_REPLY])
    m = ingest_method_table([rec("a")])[0]
    r = extract_method_report(backend, m, None)
    assert r.chunk_descriptions == ("Reads both operands.", "Returns their sum.")
    assert backend.retries == 1 and backend.calls == 1


def test_retries_exhausted():
    backend = ScriptedChatBackend([TransientBackendError("HTTP 503")] * 3)
    with pytest.raises(BackendError, match="3 attempt"):
        extract_method_report(backend, ingest_method_table([rec("a")])[0], None)


def test_remote_backend_over_mock_transport(monkeypatch, caplog):
    secret = "sk-very-secret-value"
    monkeypatch.setenv("SEMFL_CHAT_API_KEY", secret)
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) == 1:
            return httpx.Response(429)
        return httpx.Response(200, json={"choices": [{"message": {"content": METHOD_REPLY}}]})

    backend = RemoteChatBackend(
        "http://llm.test/v1", "m", retry=RetryPolicy(backoff=0), transport=httpx.MockTransport(handler)
    )
    with caplog.at_level(logging.DEBUG):
        r = extract_method_report(backend, ingest_method_table([rec("a")])[0], None)
    assert r.functionality == "Adds two numbers."
    assert seen[-1].url.path == "/v1/chat/completions"
    assert seen[-1].headers["authorization"] == f"Bearer {secret}"
    body = json.loads(seen[-1].content)
    assert body["temperature"] == 1.0 and body["messages"][0]["content"] == prompts.METHOD_SYSTEM
    assert secret not in caplog.text


def test_remote_backend_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request")

    backend = RemoteChatBackend("http://x", "m", transport=httpx.MockTransport(handler))
    with pytest.raises(BackendError, match="400"):
        backend.complete([{"role": "user", "content": "hi"}])
    assert len(calls) == 1


# --- prompts ----------------------------------------------------------------------


def test_method_prompt_null_comment_and_context():
    m = ingest_method_table([rec("a")])[0]
    text = method_prompt(m, None)
    assert "(none)" in text
    assert "return 1;" in text
    ctx = parse_module_report("M000", MODULE_REPLY)
    assert "Cart totals" in method_prompt(m, ctx)


# --- knowledge base ---------------------------------------------------------------


def test_mock_build_is_total_and_consistent(toy_graph, tmp_path):
    p = detect_modules(toy_graph, seed=42)
    kb = build_knowledge_base(MockChatBackend(), toy_graph, p, out_dir=tmp_path)
    kb.validate()
    assert set(kb.method_reports) == set(toy_graph.nodes)
    assert set(kb.module_reports) == set(p.modules)
    for m in toy_graph.nodes:
        g_text, m_text, chunks = kb.knowledge_triple(m)
        assert g_text and m_text and chunks
        assert kb.method_module[m] == p.module_of(m)
        assert [c[1] for c in kb.method_chunks[m]] == list(range(len(chunks)))
    assert KnowledgeBase.load(tmp_path) == kb


def test_mock_reports_golden(toy_graph):
    p = detect_modules(toy_graph, seed=42)
    kb = build_knowledge_base(MockChatBackend(), toy_graph, p)
    doc = {
        "modules": {k: v.to_json() for k, v in sorted(kb.module_reports.items())},
        "methods": {k: v.to_json() for k, v in sorted(kb.method_reports.items())},
    }
    check_golden("toy_kb.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def test_module_context_toggle_changes_prompt(toy_graph):
    p = detect_modules(toy_graph, seed=42)
    b1, b2 = ScriptedChatBackend(lambda m: reply_for(m)), ScriptedChatBackend(lambda m: reply_for(m))
    build_knowledge_base(b1, toy_graph, p, workers=1)
    build_knowledge_base(b2, toy_graph, p, workers=1, module_context=False)
    with_ctx = [t[-1]["content"] for t in b1.transcript if t[0]["content"] == prompts.METHOD_SYSTEM]
    no_ctx = [t[-1]["content"] for t in b2.transcript if t[0]["content"] == prompts.METHOD_SYSTEM]
    assert all("Cart totals" in t for t in with_ctx)
    assert not any("Cart totals" in t for t in no_ctx)


def reply_for(messages):
    return MODULE_REPLY if messages[0]["content"] == prompts.MODULE_SYSTEM else METHOD_REPLY


def test_resume_skips_finished_methods(toy_graph, tmp_path):
    p = detect_modules(toy_graph, seed=42)
    n_modules, n_methods = len(p.modules), len(toy_graph.nodes)
    budget = n_modules + 5

    def limited(messages):
        limited.count += 1
        if limited.count > budget:
            raise BackendError("offline")
        return reply_for(messages)

    limited.count = 0
    with pytest.raises(BackendError):
        build_knowledge_base(ScriptedChatBackend(limited), toy_graph, p, out_dir=tmp_path, workers=1)
    assert len(list((tmp_path / "methods").glob("*.json"))) == 5

    second = ScriptedChatBackend(reply_for)
    kb = build_knowledge_base(second, toy_graph, p, out_dir=tmp_path, workers=1)
    assert second.calls == n_methods - 5
    assert len(kb.method_reports) == n_methods


def test_partition_mismatch_rejected(toy_graph):
    nodes = sorted(toy_graph.nodes)[:-1]
    bad = ModulePartition({n: "M000" for n in nodes}, {"M000": tuple(nodes)}, 0.0, ())
    with pytest.raises(IntegrityError):
        build_knowledge_base(MockChatBackend(), toy_graph, bad)


def test_load_detects_tampered_maps(toy_kb, tmp_path):
    toy_kb.save(tmp_path)
    maps = json.loads((tmp_path / "maps.json").read_text())
    maps["method_chunks"]["m00"] = maps["method_chunks"]["m00"][:1]
    (tmp_path / "maps.json").write_text(json.dumps(maps))
    with pytest.raises(IntegrityError):
        KnowledgeBase.load(tmp_path)
