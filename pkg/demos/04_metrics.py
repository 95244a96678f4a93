"""
Scoring a localizer
===================

Top-N, mean first rank and mean average rank over a handful of bugs.
"""

from semfl.metrics import aggregate, average_rank, first_rank, project_table, table_csv, top_n
from semfl.voting import RankedEntry, RankedReport


def ranking(bug_id, ids):
    return RankedReport(bug_id, tuple(RankedEntry(m, 1.0 / k, k, 0.0, 1.0 / k, 0.0) for k, m in enumerate(ids, 1)))


ranked = ["m2", "m1", "m3"]
print("top-1:", top_n(ranked, {"m1"}, 1), " top-5:", top_n(ranked, {"m1"}, 5))
print("first rank:", first_rank(ranked, {"m1"}))

# A method the localizer never returned ranks just past the end of the list.
print("absent:", first_rank(ranked, {"m9"}))
print("average over {m1, m9}:", average_rank(ranked, {"m1", "m9"}))

reports = [
    ranking("Lang-1", ["a", "b", "c"]),
    ranking("Lang-2", ["x", "y", "z", "w", "v"]),
    ranking("Math-1", ["p", "q"]),
    ranking("Math-2", [f"n{k}" for k in range(12)]),
]
truth = {"Lang-1": {"a"}, "Lang-2": {"v"}, "Math-1": {"r"}, "Math-2": {"n3", "n10"}}

ev = aggregate(reports, truth)
print(f"\nTop-1 {ev.top[1]}  Top-5 {ev.top[5]}  Top-10 {ev.top[10]}  MFR {ev.mfr:.2f}  MAR {ev.mar:.2f}")
for b in ev.bugs:
    print(f"  {b.bug_id:7s} first {b.first_rank:2d}  ranks {b.all_ranks}")

# Same numbers with a fixed recall window of 5
ev5 = aggregate(reports, truth, recall_size=5)
print(f"window 5: MFR {ev5.mfr:.2f}  MAR {ev5.mar:.2f}")

print()
print(table_csv(project_table(reports, truth)))
