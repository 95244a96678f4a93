import json

import pytest

from semfl import prompts
from semfl.backends import MockChatBackend, ScriptedChatBackend
from semfl.callgraph import FailedTest
from semfl.errors import ArgumentError, ProtocolParseError, QueryGenError
from semfl.index import HashEmbedder, build_index
from semfl.querygen import (
    Answer,
    FaultInfo,
    QuerySet,
    Request,
    generate_all,
    generate_queries,
    parse_protocol_response,
)

from conftest import make_kb

ANSWER = json.dumps({"module": "cache layer", "method": "evict entry", "chunk": "remove key from map"})
REQUEST = json.dumps({"request": "which module handles caching?"})


@pytest.mark.parametrize(
    "text, expected",
    [
        (REQUEST, Request("which module handles caching?")),
        (ANSWER, Answer("cache layer", "evict entry", "remove key from map")),
        ("Sure! ```json\n" + ANSWER + "\n```", Answer("cache layer", "evict entry", "remove key from map")),
        (json.dumps({"request": "x", "module": "a", "method": "b", "chunk": "c"}), Answer("a", "b", "c")),
    ],
)
def test_parse_protocol_shapes(text, expected):
    assert parse_protocol_response(text) == expected


@pytest.mark.parametrize(
    "text",
    ["no json here", '{"module": "a", "method": "b"}', '{"request": "   "}', "{broken", '{"chunk": 3}'],
)
def test_parse_protocol_rejects(text):
    with pytest.raises(ProtocolParseError):
        parse_protocol_response(text)


def fault(test_id="t1"):
    return FaultInfo(test_id, "void testEvict() { cache.evict(k); }", "expected 1", "at C.evict(C.java:3)")


@pytest.fixture
def setup():
    kb = make_kb(12, 6, seed=3)
    e = HashEmbedder()
    return kb, build_index(e, kb, "module"), e


def test_immediate_answer_uses_zero_rounds(setup):
    kb, idx, e = setup
    backend = ScriptedChatBackend([ANSWER])
    q = generate_queries(backend, fault(), idx, kb, e=e)
    assert (q.module, q.rounds_used, q.fallback) == ("cache layer", 0, False)
    assert backend.calls == 1


def test_one_request_then_answer(setup):
    kb, idx, e = setup
    backend = ScriptedChatBackend([REQUEST, ANSWER])
    transcript = []
    q = generate_queries(backend, fault(), idx, kb, e=e, transcript=transcript)
    assert q.rounds_used == 1
    served = transcript[0]["served_module"]
    assert served in kb.module_reports
    second_prompt = backend.transcript[1][1]["content"]
    assert kb.module_reports[served].title in second_prompt


def test_always_request_hits_budget(setup):
    kb, idx, e = setup
    backend = ScriptedChatBackend(lambda m: REQUEST)
    transcript = []
    q = generate_queries(backend, fault(), idx, kb, max_rounds=5, e=e, transcript=transcript)
    assert backend.calls == 6
    assert q.rounds_used == 5 and q.fallback
    assert transcript[-1]["final"] and prompts.FORCE_FINAL == transcript[-1]["messages"][-1]["content"]
    served = [t["served_module"] for t in transcript if "served_module" in t]
    assert len(served) == len(set(served)) == 5
    assert "caching" in q.method


def test_force_final_when_modules_exhausted():
    kb = make_kb(4, 2, seed=1)
    e = HashEmbedder()
    idx = build_index(e, kb, "module")
    backend = ScriptedChatBackend([REQUEST, REQUEST, REQUEST, ANSWER])
    transcript = []
    q = generate_queries(backend, fault(), idx, kb, max_rounds=5, e=e, transcript=transcript)
    assert q.rounds_used == 2 and not q.fallback
    assert [t["final"] for t in transcript] == [False, False, False, True]


def test_no_module_index_forces_answer():
    backend = ScriptedChatBackend([REQUEST, ANSWER])
    q = generate_queries(backend, fault(), None, None, max_rounds=5)
    assert q.rounds_used == 0 and backend.calls == 2


def test_zero_rounds_goes_straight_to_final():
    backend = ScriptedChatBackend([ANSWER])
    generate_queries(backend, fault(), None, None, max_rounds=0)
    assert backend.transcript[0][-1]["content"] == prompts.FORCE_FINAL


def test_two_bad_replies_raise(setup):
    kb, idx, e = setup
    backend = ScriptedChatBackend(["nope", "still nope"])
    with pytest.raises(QueryGenError) as ei:
        generate_queries(backend, fault(), idx, kb, e=e)
    assert len(ei.value.transcript) == 2
    assert backend.transcript[1][-1]["content"] == prompts.PROTOCOL_REMINDER


def test_one_bad_reply_recovers(setup):
    kb, idx, e = setup
    q = generate_queries(ScriptedChatBackend(["nope", ANSWER]), fault(), idx, kb, e=e)
    assert q.method == "evict entry"


def test_duplicate_module_detail_rejected(setup):
    kb, _, _ = setup
    f = fault()
    f.add_module("G0", kb.module_reports["G0"])
    with pytest.raises(ArgumentError):
        f.add_module("G0", kb.module_reports["G0"])


def test_queryset_rejects_blank():
    with pytest.raises(ArgumentError):
        QuerySet("t", "a", " ", "c")


def test_queryset_json_roundtrip():
    q = QuerySet("t", "a", "b", "c", 2, True)
    assert QuerySet.from_json(q.to_json("x.json")) == q


def test_generate_all_orders_by_test_id(setup):
    kb, idx, e = setup
    tests = [FailedTest(t, "void testX() {}", None, None) for t in ("t3", "t1", "t2")]
    out = generate_all(ScriptedChatBackend(lambda m: ANSWER), tests, idx, kb, e=e, workers=3)
    assert [q.test_id for q, _ in out] == ["t1", "t2", "t3"]


def test_mock_backend_requests_then_answers(setup):
    kb, idx, e = setup
    f = FaultInfo(
        "shop.CartTest#testTenPercentDiscount",
        "@Test public void testTenPercentDiscount() { assertEquals(90.0, cart.checkoutTotal(10), 1e-9); }",
        "expected:<90.0> but was:<100.0>",
        "java.lang.AssertionError\n\tat shop.Pricing.applyDiscount(Pricing.java:20)\n\tat shop.CartTest.testTenPercentDiscount(CartTest.java:9)",
    )
    q = generate_queries(MockChatBackend(), f, idx, kb, e=e)
    assert q.rounds_used == 1 and not q.fallback
    assert "discount" in q.method.lower()
