import random
import sys
from pathlib import Path

import pytest

from semfl.knowledge import KnowledgeBase, MethodReport, ModuleReport

TOY = Path(__file__).resolve().parents[1] / "src" / "semfl" / "data" / "toyproject"
GOLDEN = Path(__file__).resolve().parent / "golden"

VOCAB = (
    "parse token stream buffer cache evict lookup insert delete update index key value tree node "
    "balance rotate hash bucket resize merge split sort order compare swap render layout paint "
    "event queue dispatch handler timer retry socket read write flush encode decode checksum"
).split()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "SUMMARY", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda x: int(x.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)


@pytest.fixture
def toy_dir():
    return TOY


def random_text(rng, lo=3, hi=8):
    return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(lo, hi)))


def make_kb(n_methods=10, n_modules=2, chunks=None, seed=0) -> KnowledgeBase:
    """Synthetic knowledge base with random vocabulary texts.

    ``chunks``: list of chunk counts per method (default: random 1..4).
    """
    rng = random.Random(seed)
    methods = [f"m{k:02d}" for k in range(n_methods)]
    modules = [f"G{k}" for k in range(n_modules)]
    method_module = {m: modules[k % n_modules] for k, m in enumerate(methods)}
    counts = chunks or [rng.randint(1, 4) for _ in methods]
    mreports = {
        g: ModuleReport(g, random_text(rng), random_text(rng), (random_text(rng),)) for g in modules
    }
    reports = {
        m: MethodReport(m, random_text(rng), tuple(random_text(rng) for _ in range(c)))
        for m, c in zip(methods, counts)
    }
    return KnowledgeBase(mreports, reports, method_module)


@pytest.fixture
def toy_kb():
    # 10 methods, 2 modules, 23 chunks
    return make_kb(10, 2, chunks=[3, 2, 2, 3, 2, 2, 3, 2, 2, 2], seed=7)


def random_bundles(rng, kb, n_tests, size):
    """Bundles with random members and evidence in [-1, 1]; pruning is not enforced."""
    from semfl.retrieval import RetrievalBundle

    methods = sorted(kb.method_reports)
    modules = sorted(kb.module_reports)
    chunks = [c for m in methods for c in kb.chunks_of(m)]
    out = []
    for t in range(n_tests):
        def pick(pool):
            k = rng.randint(0 if pool is not methods else 1, min(size, len(pool)))
            return tuple((x, rng.uniform(-1, 1)) for x in rng.sample(pool, k))

        out.append(RetrievalBundle(f"t{t}", pick(methods), pick(modules), pick(chunks)))
    return out
