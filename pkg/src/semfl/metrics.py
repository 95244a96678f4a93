"""Top-N, mean first rank (MFR) and mean average rank (MAR).

A buggy method missing from a ranked list is given rank ``len(list) + 1``.
Passing ``recall_size`` switches to clamped ranks: only the first
``recall_size`` entries count as found, and every other method ranks
``recall_size + 1``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from .errors import IntegrityError, ParseError
from .voting import RankedReport

TOP_NS = (1, 5, 10)


def _ids(ranked: RankedReport | Sequence[str]) -> list[str]:
    return ranked.method_ids if isinstance(ranked, RankedReport) else list(ranked)


def top_n(ranked, truth: Iterable[str], n: int) -> int:
    truth = set(truth)
    return int(any(m in truth for m in _ids(ranked)[:n]))


def _ranks(ids: list[str], truth: set[str], recall_size: int | None) -> list[int]:
    limit = len(ids) if recall_size is None else min(recall_size, len(ids))
    absent = (len(ids) if recall_size is None else recall_size) + 1
    pos = {m: k for k, m in enumerate(ids[:limit], 1)}
    return [pos.get(m, absent) for m in sorted(truth)]


def first_rank(ranked, truth: Iterable[str], recall_size: int | None = None) -> int:
    return min(_ranks(_ids(ranked), set(truth), recall_size))


def average_rank(ranked, truth: Iterable[str], recall_size: int | None = None) -> float:
    return fmean(_ranks(_ids(ranked), set(truth), recall_size))


@dataclass(frozen=True)
class BugRecord:
    bug_id: str
    first_rank: int
    all_ranks: tuple[int, ...]
    list_length: int
    hits: Mapping[int, int]

    @property
    def average_rank(self) -> float:
        return fmean(self.all_ranks)


@dataclass(frozen=True)
class EvalReport:
    bugs: tuple[BugRecord, ...]
    top: Mapping[int, int]
    mfr: float
    mar: float

    def to_json(self) -> dict:
        return {
            "bugs": [
                {
                    "bug_id": b.bug_id,
                    "first_rank": b.first_rank,
                    "all_ranks": list(b.all_ranks),
                    "average_rank": b.average_rank,
                    "list_length": b.list_length,
                    **{f"top{n}": b.hits[n] for n in TOP_NS},
                }
                for b in self.bugs
            ],
            **{f"top{n}": self.top[n] for n in TOP_NS},
            "mfr": self.mfr,
            "mar": self.mar,
        }


def aggregate(
    reports: Sequence[RankedReport], truth: Mapping[str, Iterable[str]], recall_size: int | None = None
) -> EvalReport:
    """Per-bug records plus Top-1/5/10 counts, MFR and MAR (bugs sorted by id)."""
    records = []
    for r in sorted(reports, key=lambda r: r.bug_id):
        if r.bug_id not in truth or not set(truth[r.bug_id]):
            raise IntegrityError(f"no ground truth for bug {r.bug_id!r}")
        t = set(truth[r.bug_id])
        ids = r.method_ids
        ranks = tuple(_ranks(ids, t, recall_size))
        records.append(BugRecord(r.bug_id, min(ranks), ranks, len(ids), {n: top_n(ids, t, n) for n in TOP_NS}))
    if not records:
        raise IntegrityError("no reports to evaluate")
    return EvalReport(
        tuple(records),
        {n: sum(b.hits[n] for b in records) for n in TOP_NS},
        fmean(b.first_rank for b in records),
        fmean(b.average_rank for b in records),
    )


def project_of(bug_id: str) -> str:
    """``Lang-12`` -> ``Lang``; ids without a dash are their own project."""
    return bug_id.rsplit("-", 1)[0] if "-" in bug_id else bug_id


def project_table(reports: Sequence[RankedReport], truth: Mapping[str, Iterable[str]], recall_size=None) -> list[dict]:
    """Rows per project plus a Total row, columns as in a typical results table."""
    groups: dict[str, list[RankedReport]] = {}
    for r in reports:
        groups.setdefault(project_of(r.bug_id), []).append(r)
    rows = []
    for name in sorted(groups) + ["Total"]:
        ev = aggregate(reports if name == "Total" else groups[name], truth, recall_size)
        rows.append({"project": name, "bugs": len(ev.bugs), **{f"top{n}": ev.top[n] for n in TOP_NS},
                     "mfr": round(ev.mfr, 2), "mar": round(ev.mar, 2)})
    return rows


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def load_truth(document: str | Mapping) -> dict[str, set[str]]:
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"truth document is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ParseError("truth document must be an object of bug_id -> [method ids]")
    out = {}
    for bug, ms in document.items():
        if not isinstance(ms, list) or not ms:
            raise ParseError(f"truth for {bug!r} must be a non-empty list")
        out[bug] = set(map(str, ms))
    return out
