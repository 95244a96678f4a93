"""Suspiciousness voting over retrieval bundles.

A retrieved method's score sums, over all failed tests, the similarity of
every retrieved module it belongs to, every retrieval hit of the method itself,
and every retrieved chunk it owns. Similarities are summed as-is (negative
values included).
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from . import prompts
from .backends import ChatBackend
from .errors import BackendError, IntegrityError
from .knowledge import KnowledgeBase
from .querygen import QuerySet
from .retrieval import RetrievalBundle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedEntry:
    method_id: str
    score: float
    rank: int
    module: float
    method: float
    chunk: float

    def to_json(self, explanation: str | None = None) -> dict:
        d = {
            "method_id": self.method_id,
            "score": self.score,
            "rank": self.rank,
            "evidence": {"module": self.module, "method": self.method, "chunk": self.chunk},
        }
        if explanation is not None:
            d["explanation"] = explanation
        return d


@dataclass(frozen=True)
class RankedReport:
    bug_id: str
    entries: tuple[RankedEntry, ...]
    explanations: dict[str, str] | None = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def method_ids(self) -> list[str]:
        return [e.method_id for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def to_json(self) -> dict:
        ex = self.explanations or {}
        doc = {"bug_id": self.bug_id, "entries": [e.to_json(ex.get(e.method_id)) for e in self.entries]}
        if self.warnings:
            doc["warnings"] = list(self.warnings)
        return doc

    @classmethod
    def from_json(cls, d) -> "RankedReport":
        entries = tuple(
            RankedEntry(
                e["method_id"], float(e["score"]), int(e["rank"]),
                float(e["evidence"]["module"]), float(e["evidence"]["method"]), float(e["evidence"]["chunk"]),
            )
            for e in d["entries"]
        )
        ex = {e["method_id"]: e["explanation"] for e in d["entries"] if "explanation" in e}
        return cls(d["bug_id"], entries, ex or None, tuple(d.get("warnings", ())))


def _check_refs(bundles: Sequence[RetrievalBundle], kb: KnowledgeBase) -> None:
    for b in bundles:
        for m, _ in b.methods:
            if m not in kb.method_module:
                raise IntegrityError(f"bundle {b.test_id} references unknown method {m!r}")
        for (m, _), _ in b.chunks:
            if m not in kb.method_module:
                raise IntegrityError(f"bundle {b.test_id} references chunk of unknown method {m!r}")
        for g, _ in b.modules:
            if g not in kb.module_reports:
                raise IntegrityError(f"bundle {b.test_id} references unknown module {g!r}")


def evidence_table(
    bundles: Sequence[RetrievalBundle], kb: KnowledgeBase, candidates: Iterable[str]
) -> dict[str, tuple[float, float, float]]:
    """(module, method, chunk) evidence sums for each candidate method.

    Sums use ``math.fsum`` so the result does not depend on bundle or list order.
    """
    _check_refs(bundles, kb)
    cands = set(candidates)
    by_module = defaultdict(list)
    for m in cands:
        by_module[kb.method_module[m]].append(m)
    ev = {m: ([], [], []) for m in cands}
    for b in bundles:
        for g, sim in b.modules:
            for m in by_module.get(g, ()):
                ev[m][0].append(sim)
        for m, sim in b.methods:
            if m in ev:
                ev[m][1].append(sim)
        for (m, _), sim in b.chunks:
            if m in ev:
                ev[m][2].append(sim)
    return {m: (math.fsum(a), math.fsum(b), math.fsum(c)) for m, (a, b, c) in ev.items()}


def score_methods(bundles: Sequence[RetrievalBundle], kb: KnowledgeBase, bug_id: str = "bug") -> RankedReport:
    """Rank the union of retrieved methods by summed evidence (ties: method id)."""
    if not bundles:
        raise IntegrityError("at least one retrieval bundle is required")
    candidates = {m for b in bundles for m, _ in b.methods}
    table = evidence_table(bundles, kb, candidates)
    scored = sorted(((math.fsum(parts), m, parts) for m, parts in table.items()), key=lambda t: (-t[0], t[1]))
    entries = tuple(
        RankedEntry(m, score, rank, *parts) for rank, (score, m, parts) in enumerate(scored, 1)
    )
    return RankedReport(bug_id, entries)


def explain_top_k(
    backend: ChatBackend,
    report: RankedReport,
    kb: KnowledgeBase,
    k: int = 5,
    queries: Sequence[QuerySet] = (),
) -> RankedReport:
    """Attach model-written rationales to the top ``k`` entries.

    Explanations are best effort: a backend failure returns the ranking
    unchanged, without explanations, and with a warning recorded.
    """
    if not report.entries:
        raise IntegrityError("cannot explain an empty report")
    qtexts = [t for q in queries for t in (q.method, q.chunk)]
    out = {}
    try:
        for e in report.entries[:k]:
            prompt = prompts.render_explain_prompt(
                e.method_id, e.rank, e.score, kb.method_text(e.method_id), qtexts
            )
            out[e.method_id] = backend.complete(
                [{"role": "system", "content": prompts.EXPLAIN_SYSTEM}, {"role": "user", "content": prompt}]
            ).strip()
    except BackendError as exc:
        logger.warning("explanations skipped: %s", exc)
        return replace(report, explanations=None, warnings=report.warnings + (f"explanations unavailable: {exc}",))
    return replace(report, explanations=out)
