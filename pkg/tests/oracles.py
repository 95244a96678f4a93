"""Brute-force reference computations, kept independent of the package code paths."""

from __future__ import annotations

import hashlib
import itertools
import math
import re

import numpy as np


def set_partitions(items):
    """All set partitions of ``items`` (restricted growth strings)."""
    items = list(items)
    n = len(items)
    if n == 0:
        yield []
        return

    def rgs(prefix, maxv):
        if len(prefix) == n:
            yield prefix
            return
        for v in range(maxv + 2):
            yield from rgs(prefix + [v], max(maxv, v))

    for code in rgs([0], 0):
        yield [[items[i] for i in range(n) if code[i] == b] for b in range(max(code) + 1)]


def dense_weights(nodes, directed_edges):
    """Symmetrized dense matrix A' = A + A^T from a directed edge dict."""
    idx = {v: k for k, v in enumerate(nodes)}
    A = np.zeros((len(nodes), len(nodes)))
    for (a, b), w in directed_edges.items():
        A[idx[a], idx[b]] += w
    return A + A.T


def modularity_pairwise(A, labels):
    """Plain double sum over all ordered node pairs, as a masked matrix sum."""
    labels = np.asarray(labels)
    W = A.sum()
    k = A.sum(axis=1)
    same = labels[:, None] == labels[None, :]
    return float(((A - np.outer(k, k) / W) * same).sum() / W)


def best_partition(nodes, directed_edges):
    A = dense_weights(nodes, directed_edges)
    best_q, best = -math.inf, None
    for part in set_partitions(range(len(nodes))):
        labels = [0] * len(nodes)
        for c, block in enumerate(part):
            for i in block:
                labels[i] = c
        q = modularity_pairwise(A, labels)
        if q > best_q + 1e-12:
            best_q, best = q, part
    return best_q, [sorted(nodes[i] for i in b) for b in best]


def hash_embed(text, dim):
    """Reference tokenizer + hashed bag of words."""
    v = np.zeros(dim)
    for tok in re.findall(r"[a-z0-9]+", text.lower()):
        b = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little") % dim
        v[b] += 1
    n = math.sqrt(float(v @ v))
    return v / n if n else v


def cosine_ranking(vectors: dict, q, top_k):
    """Exhaustive cosine with a plain-Python dot product, ties by id."""
    scored = []
    qn = math.sqrt(sum(x * x for x in q))
    for eid, v in vectors.items():
        vn = math.sqrt(sum(x * x for x in v))
        s = 0.0 if vn == 0 or qn == 0 else sum(a * b for a, b in zip(v, q)) / (vn * qn)
        scored.append((eid, max(-1.0, min(1.0, s))))
    scored.sort(key=lambda t: (-round(t[1], 12), t[0]))
    return scored[:top_k]


def brute_force_scores(bundles, method_module, candidates):
    """Loop over every (test, granularity, element, candidate) tuple."""
    scores = {m: 0.0 for m in candidates}
    for b in bundles:
        for m in candidates:
            for g, sim in b.modules:
                if method_module[m] == g:
                    scores[m] += sim
            for mm, sim in b.methods:
                if mm == m:
                    scores[m] += sim
            for (owner, _), sim in b.chunks:
                if owner == m:
                    scores[m] += sim
    return scores


def simulate_repair(nodes_by_module, sym_edges, min_size, max_size):
    """Step-by-step merge simulation on a module-level weight matrix.

    ``nodes_by_module``: list of node lists. ``sym_edges``: {(u, v): w'} over
    ordered pairs (both directions present). Returns the final list of sorted
    node groups and the merge log [(src_min_id, dst_min_id), ...].
    """
    groups = [sorted(g) for g in nodes_by_module]
    stuck = set()
    log = []
    while True:
        owner = {v: k for k, g in enumerate(groups) for v in g}
        K = len(groups)
        M = np.zeros((K, K))
        for (u, v), w in sym_edges.items():
            if owner[u] != owner[v]:
                M[owner[u], owner[v]] += w
        small = [k for k in range(K) if len(groups[k]) < min_size and groups[k][0] not in stuck]
        if not small:
            return sorted(groups), log
        s = min(small, key=lambda k: (len(groups[k]), groups[k][0]))
        nbrs = [k for k in range(K) if k != s and M[s, k] > 0]
        if not nbrs:
            stuck.add(groups[s][0])
            continue
        fit = [k for k in nbrs if len(groups[k]) + len(groups[s]) <= max_size]
        pool = fit or nbrs
        best = max(M[s, k] for k in pool)
        t = min((k for k in pool if M[s, k] == best), key=lambda k: groups[k][0])
        log.append((groups[s][0], groups[t][0]))
        merged = sorted(groups[s] + groups[t])
        stuck.discard(groups[t][0])
        groups = [g for k, g in enumerate(groups) if k not in (s, t)] + [merged]


def two_cliques(k, bridge_weight=1, prefix=("a", "b")):
    edges = {}
    for p in prefix:
        for i, j in itertools.combinations(range(k), 2):
            edges[(f"{p}{i}", f"{p}{j}")] = 1
    edges[(f"{prefix[0]}{k - 1}", f"{prefix[1]}0")] = bridge_weight
    return edges
