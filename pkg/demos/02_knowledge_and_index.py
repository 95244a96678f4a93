"""
From code to searchable knowledge
=================================

Describe every module and method in natural language, then embed those
descriptions at three granularities.
"""

from importlib.resources import files

from semfl.backends import MockChatBackend
from semfl.callgraph import build_call_graph, load_invocations, load_method_table
from semfl.community import detect_modules
from semfl.index import HashEmbedder, build_indexes, retrieve
from semfl.knowledge import build_knowledge_base, serialize_module

toy = files("semfl") / "data" / "toyproject"
g = build_call_graph(load_invocations(str(toy / "calls.jsonl")), load_method_table(str(toy / "methods.json")))
p = detect_modules(g, seed=42)

# This is what the model sees for one module: members, code, and call edges.
text = serialize_module(g, p.functional_modules(g)[1])
print(text[:700], "...\n")

# The offline mock backend stands in for a chat model. It is deterministic.
kb = build_knowledge_base(MockChatBackend(), g, p)
for mid, r in kb.module_reports.items():
    print(mid, "->", r.title)

bug = "shop.Pricing#applyDiscount(double,int)"
module_text, functionality, chunks = kb.knowledge_triple(bug)
print("\n", bug)
print("  functionality:", functionality)
for k, c in enumerate(chunks):
    print(f"  chunk {k}:", c)

# Hashed bag-of-words vectors keep the demo offline.
e = HashEmbedder(256)
idx = build_indexes(e, kb)
print("\nindex sizes:", {name: len(i) for name, i in idx.items()})

for method_id, sim in retrieve(idx["method"], "apply a percentage discount to a price", 3, e):
    print(f"  {sim:.3f}  {method_id}")
