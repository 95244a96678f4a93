"""Functional module detection on the call graph.

Modules are communities of the symmetrized call graph found by a Leiden search
(local moving, refinement, aggregation) over weighted modularity. Community
sizes, counted in original method nodes, are capped during the search itself.
A repair pass then folds undersized modules into their most strongly connected
neighbour.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .callgraph import CallGraph, SymmetricWeights, symmetrized_view
from .errors import ArgumentError, IntegrityError, UndefinedModularityError

logger = logging.getLogger(__name__)

QUALITY_TOL = 1e-9


def modularity(weights: SymmetricWeights, assignment: Mapping[str, object]) -> float:
    """Weighted modularity of ``assignment`` over symmetric weights.

    Computed community-wise: sum over communities of
    ``internal/W - (degree_sum/W)**2`` which equals the pairwise double sum.
    """
    W = weights.total
    if W <= 0:
        raise UndefinedModularityError("modularity is undefined for a graph with zero total weight")
    missing = [n for n in weights.adj if n not in assignment]
    if missing:
        raise ArgumentError(f"assignment does not cover node(s) {missing[:5]}")
    internal: dict[object, float] = defaultdict(float)
    degree: dict[object, float] = defaultdict(float)
    for i, row in weights.adj.items():
        ci = assignment[i]
        for j, w in row.items():
            degree[ci] += w
            if assignment[j] == ci:
                internal[ci] += w
    q = math.fsum(internal[c] / W - (degree[c] / W) ** 2 for c in degree)
    return q


@dataclass(frozen=True)
class FunctionalModule:
    module_id: str
    members: tuple[str, ...]
    internal_edges: tuple[tuple[str, str, int], ...] = ()


@dataclass(frozen=True)
class ModulePartition:
    """Node-to-module assignment plus its modularity.

    ``assignment`` and ``modules`` are two views of the same partition.
    """

    assignment: Mapping[str, str]
    modules: Mapping[str, tuple[str, ...]]
    quality: float
    q_history: tuple[float, ...] = field(default=(), compare=False)

    @classmethod
    def from_groups(
        cls, weights: SymmetricWeights, groups: Iterable[Iterable[str]], q_history=()
    ) -> "ModulePartition":
        """Canonical ids: modules ordered by their smallest member, named M000, M001, ..."""
        ordered = sorted((tuple(sorted(g)) for g in groups if g), key=lambda g: g[0])
        modules = {f"M{k:03d}": g for k, g in enumerate(ordered)}
        assignment = {n: mid for mid, g in modules.items() for n in g}
        if len(assignment) != sum(len(g) for g in ordered):
            raise IntegrityError("groups overlap")
        return cls(assignment, modules, modularity(weights, assignment), tuple(q_history))

    def module_of(self, node: str) -> str:
        return self.assignment[node]

    def functional_modules(self, g: CallGraph) -> list[FunctionalModule]:
        return [FunctionalModule(mid, ms, tuple(g.edges_within(ms))) for mid, ms in self.modules.items()]

    def to_json(self, **extra) -> dict:
        doc = {
            "modules": [{"module_id": mid, "members": list(ms)} for mid, ms in self.modules.items()],
            "quality": self.quality,
        }
        doc.update(extra)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "ModulePartition":
        modules = {m["module_id"]: tuple(m["members"]) for m in doc["modules"]}
        assignment = {n: mid for mid, ms in modules.items() for n in ms}
        return cls(assignment, modules, float(doc["quality"]))


# --- Leiden -----------------------------------------------------------------


@dataclass
class _Level:
    """One level of the (possibly aggregated) graph with integer node ids."""

    adj: list[dict[int, float]]
    degree: list[float]
    size: list[int]

    @property
    def n(self) -> int:
        return len(self.adj)


def _level_from_weights(weights: SymmetricWeights, order: list[str]) -> _Level:
    index = {name: k for k, name in enumerate(order)}
    adj = [dict() for _ in order]
    for i, row in weights.adj.items():
        for j, w in row.items():
            if w:
                adj[index[i]][index[j]] = adj[index[i]].get(index[j], 0.0) + w
    return _Level(adj, [sum(r.values()) for r in adj], [1] * len(order))


def _move_nodes_fast(level: _Level, comm: list[int], W: float, max_size: int, rng) -> bool:
    """Queue-based local moving. Mutates ``comm``; returns True if any node moved."""
    n = level.n
    cdeg = [0.0] * n
    csize = [0] * n
    for v in range(n):
        cdeg[comm[v]] += level.degree[v]
        csize[comm[v]] += level.size[v]
    empty = [c for c in range(n) if csize[c] == 0]

    queue = deque(int(v) for v in rng.permutation(n))
    queued = [True] * n
    moved = False
    while queue:
        v = queue.popleft()
        queued[v] = False
        cv, kv, sv = comm[v], level.degree[v], level.size[v]
        links: dict[int, float] = defaultdict(float)
        for u, w in level.adj[v].items():
            if u != v:
                links[comm[u]] += w
        cdeg[cv] -= kv
        csize[cv] -= sv

        best_c = cv
        best_gain = links.get(cv, 0.0) - cdeg[cv] * kv / W
        tol = 1e-12 * max(1.0, kv)
        for c in sorted(links):
            if c == cv or csize[c] + sv > max_size:
                continue
            gain = links[c] - cdeg[c] * kv / W
            if gain > best_gain + tol:
                best_c, best_gain = c, gain
        if csize[cv] > 0 and 0.0 > best_gain + tol:
            while csize[empty[-1]] != 0:
                empty.pop()
            best_c = empty[-1]

        comm[v] = best_c
        cdeg[best_c] += kv
        csize[best_c] += sv
        if csize[cv] == 0:
            empty.append(cv)
        if best_c != cv:
            moved = True
            for u in level.adj[v]:
                if u != v and not queued[u] and comm[u] != best_c:
                    queue.append(u)
                    queued[u] = True
    return moved


def _refine(level: _Level, comm: list[int], W: float, randomness: float, rng) -> list[int]:
    """Merge nodes within each community into well-connected sub-communities."""
    n = level.n
    refined = list(range(n))
    rdeg = list(level.degree)
    singleton = [True] * n
    members: dict[int, list[int]] = defaultdict(list)
    for v in range(n):
        members[comm[v]].append(v)

    for c in sorted(members):
        ms = members[c]
        if len(ms) == 1:
            continue
        in_c = set(ms)
        K_C = sum(level.degree[v] for v in ms)
        # weight from each refined community to the rest of C
        ext = {v: sum(w for u, w in level.adj[v].items() if u != v and u in in_c) for v in ms}
        for v in (ms[int(k)] for k in rng.permutation(len(ms))):
            if not singleton[v]:
                continue
            kv = level.degree[v]
            if ext[v] < kv * (K_C - kv) / W - 1e-12:
                continue
            links: dict[int, float] = defaultdict(float)
            for u, w in level.adj[v].items():
                if u != v and u in in_c:
                    links[refined[u]] += w
            cands, gains = [v], [0.0]
            for t in sorted(links):
                if t == refined[v]:
                    continue
                if ext[t] < rdeg[t] * (K_C - rdeg[t]) / W - 1e-12:
                    continue
                gain = 2.0 * (links[t] - rdeg[t] * kv / W) / W
                if gain >= 0.0:
                    cands.append(t)
                    gains.append(gain)
            if randomness > 0:
                g = np.asarray(gains) / randomness
                p = np.exp(g - g.max())
                pick = int(rng.choice(len(cands), p=p / p.sum()))
            else:
                pick = int(np.argmax(gains))
            t = cands[pick]
            if t == v:
                continue
            ext[t] = ext[t] + ext[v] - 2.0 * links[t]
            rdeg[t] += kv
            refined[v] = t
            singleton[v] = False
            singleton[t] = False
    return refined


def _aggregate(level: _Level, groups: list[int]) -> tuple[_Level, list[int]]:
    """Collapse each group into one node; returns (new level, old->new map)."""
    relabel: dict[int, int] = {}
    for v in range(level.n):
        relabel.setdefault(groups[v], len(relabel))
    mapping = [relabel[groups[v]] for v in range(level.n)]
    m = len(relabel)
    adj = [defaultdict(float) for _ in range(m)]
    size = [0] * m
    for v in range(level.n):
        a = mapping[v]
        size[a] += level.size[v]
        for u, w in level.adj[v].items():
            adj[a][mapping[u]] += w
    adj = [dict(r) for r in adj]
    return _Level(adj, [sum(r.values()) for r in adj], size), mapping


def _leiden_pass(level: _Level, init: list[int], W: float, max_size: int, randomness: float, rng) -> list[int]:
    """One full Leiden run starting from ``init`` on ``level``; returns flat communities."""
    to_agg = list(range(level.n))
    comm = list(init)
    while True:
        _move_nodes_fast(level, comm, W, max_size, rng)
        if len(set(comm)) == level.n:
            break
        refined = _refine(level, comm, W, randomness, rng)
        if len(set(refined)) == level.n:
            # refinement made no merge; aggregate on the moved partition to guarantee progress
            refined = list(comm)
        new_level, mapping = _aggregate(level, refined)
        new_comm = [0] * new_level.n
        for v in range(level.n):
            new_comm[mapping[v]] = comm[v]
        # community labels must lie in [0, n) of the new level
        relabel: dict[int, int] = {}
        comm = [relabel.setdefault(c, len(relabel)) for c in new_comm]
        to_agg = [mapping[a] for a in to_agg]
        level = new_level
    return [comm[a] for a in to_agg]


def leiden_detect(
    g: CallGraph | SymmetricWeights,
    max_size: int = 15,
    seed: int = 42,
    randomness: float = 0.01,
    max_iterations: int = 20,
) -> ModulePartition:
    """Detect modules with a size-capped Leiden search.

    Whole Leiden passes are repeated, each seeded with the previous result, until
    modularity stops improving or ``max_iterations`` is reached. A pass that
    would lower modularity is discarded, so the recorded history is
    non-decreasing. ``randomness`` is the refinement randomness (0 = greedy).
    """
    if max_size < 1:
        raise ArgumentError("max_size must be positive")
    weights = g if isinstance(g, SymmetricWeights) else symmetrized_view(g)
    W = weights.total
    if not weights.adj or W <= 0:
        raise ArgumentError("leiden_detect needs a non-empty graph with positive total weight")
    order = weights.nodes
    level = _level_from_weights(weights, order)
    rng = np.random.default_rng(seed)

    def q_of(comm):
        return modularity(weights, dict(zip(order, comm)))

    comm = list(range(level.n))
    history = [q_of(comm)]
    for _ in range(max_iterations):
        cand = _leiden_pass(level, comm, W, max_size, randomness, rng)
        q = q_of(cand)
        if q <= history[-1] + 1e-12:
            break
        comm = cand
        history.append(q)

    groups: dict[int, list[str]] = defaultdict(list)
    for name, c in zip(order, comm):
        groups[c].append(name)
    return ModulePartition.from_groups(weights, groups.values(), q_history=history)


# --- size repair --------------------------------------------------------------


def _inter_weights(weights: SymmetricWeights, assignment: Mapping[str, str]) -> dict[str, dict[str, float]]:
    between: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))
    for i, row in weights.adj.items():
        for j, w in row.items():
            a, b = assignment[i], assignment[j]
            if a != b:
                between[a][b] += w
    return between


def repair_module_sizes(
    g: CallGraph | SymmetricWeights,
    p: ModulePartition,
    min_size: int = 5,
    max_size: int = 15,
) -> ModulePartition:
    """Merge undersized modules into their most strongly connected neighbour.

    Undersized modules are handled smallest first (ties: smallest member id).
    The target is the adjacent module with the largest total symmetrized edge
    weight whose merged size stays within ``max_size``; when every neighbour
    would overflow, the heaviest neighbour is used anyway. Weight ties go to the
    module with the smallest member id. Modules with no neighbour are left
    alone. Adjacency and sizes are recomputed after every merge.
    """
    if min_size > max_size:
        raise ArgumentError("min_size must not exceed max_size")
    weights = g if isinstance(g, SymmetricWeights) else symmetrized_view(g)
    groups = {mid: set(ms) for mid, ms in p.modules.items()}
    if set().union(*groups.values()) != set(weights.adj):
        raise ArgumentError("partition does not match the graph's node set")
    assignment = {n: mid for mid, ms in groups.items() for n in ms}
    stranded: set[str] = set()

    while True:
        small = [mid for mid, ms in groups.items() if len(ms) < min_size and mid not in stranded]
        if not small:
            break
        src = min(small, key=lambda mid: (len(groups[mid]), min(groups[mid])))
        neigh = _inter_weights(weights, assignment).get(src, {})
        neigh = {b: w for b, w in neigh.items() if w > 0}
        if not neigh:
            stranded.add(src)
            continue

        def rank(b):
            return (-neigh[b], min(groups[b]))

        fitting = [b for b in neigh if len(groups[b]) + len(groups[src]) <= max_size]
        if fitting:
            dst = min(fitting, key=rank)
        else:
            dst = min(neigh, key=rank)
            logger.info("merging %s into %s exceeds max_size %d", src, dst, max_size)
        logger.debug("merge %s (%d) -> %s (%d)", src, len(groups[src]), dst, len(groups[dst]))
        for n in groups[src]:
            assignment[n] = dst
        groups[dst] |= groups.pop(src)
        # a merged module may now reach a neighbour it previously lacked
        stranded.discard(dst)

    return ModulePartition.from_groups(weights, groups.values(), q_history=p.q_history)


def detect_modules(
    g: CallGraph, min_size: int = 5, max_size: int = 15, seed: int = 42, randomness: float = 0.01
) -> ModulePartition:
    """Leiden detection followed by size repair."""
    weights = symmetrized_view(g)
    p = leiden_detect(weights, max_size=max_size, seed=seed, randomness=randomness)
    return repair_module_sizes(weights, p, min_size=min_size, max_size=max_size)
