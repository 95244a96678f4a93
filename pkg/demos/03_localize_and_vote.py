"""
Localizing a planted bug
========================

Turn a failing test into search queries, retrieve at three granularities and
vote the evidence into a ranking.
"""

from importlib.resources import files

from semfl.backends import MockChatBackend
from semfl.callgraph import build_call_graph, load_invocations, load_method_table, load_tests
from semfl.community import detect_modules
from semfl.index import HashEmbedder, build_indexes
from semfl.knowledge import build_knowledge_base
from semfl.querygen import generate_all
from semfl.retrieval import retrieve_bundle
from semfl.voting import explain_top_k, score_methods

toy = files("semfl") / "data" / "toyproject"
g = build_call_graph(load_invocations(str(toy / "calls.jsonl")), load_method_table(str(toy / "methods.json")))
chat = MockChatBackend()
kb = build_knowledge_base(chat, g, detect_modules(g, seed=42))
e = HashEmbedder(256)
idx = build_indexes(e, kb)

tests = load_tests((toy / "tests.json").read_text())
print("failing test:", tests[0].test_id)
print(tests[0].stack_trace.splitlines()[0])

# The model may ask for module details before answering with three queries.
(queries, transcript), = generate_all(chat, tests, idx["module"], kb, max_rounds=5, e=e)
print("\nrounds used:", queries.rounds_used)
print("module query:", queries.module)
print("method query:", queries.method)
print("chunk query: ", queries.chunk)

# Methods come from the whole index; modules and chunks only from those methods.
bundle = retrieve_bundle(queries, idx, kb, top_k=50, e=e)
print("\nretrieved", len(bundle.methods), "methods,", len(bundle.modules), "modules,", len(bundle.chunks), "chunks")

report = explain_top_k(chat, score_methods([bundle], kb, "toyproject-1"), kb, k=3, queries=[queries])
print("\nrank  score   module  method  chunk   method id")
for x in report.entries[:5]:
    print(f"{x.rank:4d}  {x.score:6.3f}  {x.module:6.3f}  {x.method:6.3f}  {x.chunk:6.3f}  {x.method_id}")

top = report.entries[0].method_id
print("\nwhy", top, "?")
print(report.explanations[top])
