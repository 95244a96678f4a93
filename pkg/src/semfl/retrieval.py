"""Multi-granularity retrieval for one query set.

Methods are retrieved from the full method index. The module and chunk searches
then run only over the modules and chunks owned by those retrieved methods.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .errors import ArgumentError, IntegrityError
from .index import Embedder, EmbeddingIndex, retrieve
from .knowledge import ChunkId, KnowledgeBase
from .querygen import QuerySet


@dataclass(frozen=True)
class RetrievalBundle:
    test_id: str
    methods: tuple[tuple[str, float], ...]
    modules: tuple[tuple[str, float], ...]
    chunks: tuple[tuple[ChunkId, float], ...]

    def check(self, kb: KnowledgeBase, top_k: int | None = None) -> None:
        """Assert the pruning invariants against ``kb``."""
        mids = {m for m, _ in self.methods}
        allowed_modules = {kb.method_module[m] for m in mids}
        if not {g for g, _ in self.modules} <= allowed_modules:
            raise IntegrityError(f"{self.test_id}: module outside the pruned module set")
        if not {c[0] for c, _ in self.chunks} <= mids:
            raise IntegrityError(f"{self.test_id}: chunk owned by a non-retrieved method")
        if top_k is not None and len(self.methods) > top_k:
            raise IntegrityError(f"{self.test_id}: more than top_k methods")

    def to_json(self) -> dict:
        return {
            "test_id": self.test_id,
            "methods": [[m, e] for m, e in self.methods],
            "modules": [[g, e] for g, e in self.modules],
            "chunks": [[list(c), e] for c, e in self.chunks],
        }

    @classmethod
    def from_json(cls, d) -> "RetrievalBundle":
        return cls(
            d["test_id"],
            tuple((m, float(e)) for m, e in d["methods"]),
            tuple((g, float(e)) for g, e in d["modules"]),
            tuple(((c[0], int(c[1])), float(e)) for c, e in d["chunks"]),
        )


def retrieve_bundle(
    q: QuerySet,
    indexes: Mapping[str, EmbeddingIndex],
    kb: KnowledgeBase,
    top_k: int = 50,
    e: Embedder | None = None,
    top_k_module: int | None = None,
    top_k_chunk: int | None = None,
    module_retrieval: bool = True,
    chunk_retrieval: bool = True,
) -> RetrievalBundle:
    """Retrieve methods, then modules and chunks over the pruned candidate sets.

    The pruned module set is the modules of retrieved methods, deduplicated in
    first-occurrence order; the pruned chunk set is the union of their chunks.
    ``module_retrieval``/``chunk_retrieval`` switch off those granularities
    (their result lists stay empty).
    """
    if top_k < 1:
        raise ArgumentError("top_k must be >= 1")
    for name in ("module", "method", "chunk"):
        if not getattr(q, name).strip():
            raise ArgumentError(f"query set {q.test_id}: blank {name} query")

    methods = retrieve(indexes["method"], q.method, top_k, e)
    retrieved = [m for m, _ in methods]

    modules: list = []
    if module_retrieval:
        pruned_g = list(dict.fromkeys(kb.method_module[m] for m in retrieved))
        sub = indexes["module"].restrict(pruned_g)
        if len(sub):
            modules = retrieve(sub, q.module, top_k_module or top_k, e)

    chunks: list = []
    if chunk_retrieval:
        pruned_s = [c for m in retrieved for c in kb.chunks_of(m)]
        sub = indexes["chunk"].restrict(pruned_s)
        if len(sub):
            chunks = retrieve(sub, q.chunk, top_k_chunk or top_k, e)

    return RetrievalBundle(q.test_id, tuple(methods), tuple(modules), tuple(chunks))
