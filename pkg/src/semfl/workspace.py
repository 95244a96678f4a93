"""Workspace layout, content-hash manifests and the per-workspace lock.

Every command writes ``manifests/<command>.json``::

    {"command": ..., "inputs": {path: sha256}, "outputs": {path: sha256},
     "config_hash": ..., "version": ...}

A prerequisite is up to date when its manifest exists, its outputs still hash
to the recorded values, and (recursively) its own workspace inputs do too.
"""

from __future__ import annotations

import errno
import fcntl
import hashlib
import json
import os
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .errors import ConfigError, StalenessError

GRAPH = "graph.json"
MODULES = "modules.json"
KB = "kb"
IDX = "idx"
QUERIES = "queries.json"
TRANSCRIPTS = "transcripts"
RETRIEVAL = "retrieval"
REPORT = "report.json"
EVAL_JSON = "eval.json"
EVAL_CSV = "eval.csv"
MANIFESTS = "manifests"

# artifact -> command that produces it
PRODUCER = {
    GRAPH: "build-graph",
    MODULES: "detect-modules",
    KB: "extract-knowledge",
    IDX: "index",
    REPORT: "localize",
}


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def path_hash(path: Path) -> str:
    """sha256 of a file, or of a directory's sorted (relative path, file hash) list."""
    path = Path(path)
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(p for p in path.rglob("*") if p.is_file() and not p.name.endswith(".tmp")):
            h.update(f.relative_to(path).as_posix().encode() + b"\0" + file_hash(f).encode() + b"\n")
        return h.hexdigest()
    return file_hash(path)


def dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_manifest(ws: Path, command: str, inputs: dict, outputs: list[str], config_hash: str) -> None:
    dump_json(
        ws / MANIFESTS / f"{command}.json",
        {
            "command": command,
            "inputs": dict(sorted(inputs.items())),
            "outputs": {o: path_hash(ws / o) for o in sorted(outputs)},
            "config_hash": config_hash,
            "version": __version__,
        },
    )


def workspace_inputs(ws: Path, artifacts: list[str]) -> dict:
    return {a: path_hash(ws / a) for a in artifacts}


def require(ws: Path, artifact: str, _seen=None) -> None:
    """Raise StalenessError unless ``artifact`` and everything it was built from is current."""
    seen = _seen if _seen is not None else set()
    if artifact in seen:
        return
    seen.add(artifact)
    cmd = PRODUCER[artifact]
    mpath = ws / MANIFESTS / f"{cmd}.json"
    if not mpath.exists() or not (ws / artifact).exists():
        raise StalenessError(f"{ws / artifact} is missing; run `semfl {cmd}` first")
    manifest = read_json(mpath)
    recorded = manifest["outputs"].get(artifact)
    if recorded != path_hash(ws / artifact):
        raise StalenessError(f"{ws / artifact} changed since `semfl {cmd}` wrote it; re-run `semfl {cmd}`")
    for dep, h in manifest["inputs"].items():
        if dep in PRODUCER:
            require(ws, dep, seen)
            if path_hash(ws / dep) != h:
                raise StalenessError(
                    f"{ws / artifact} was built from an older {dep}; re-run `semfl {cmd}`"
                )


@contextmanager
def locked(ws: Path):
    ws.mkdir(parents=True, exist_ok=True)
    fh = open(ws / ".lock", "w")
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError as exc:
            if exc.errno in (errno.EAGAIN, errno.EACCES):
                raise ConfigError(f"workspace {ws} is locked by another command") from exc
            raise
        yield
    finally:
        fh.close()
