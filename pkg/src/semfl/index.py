"""Embedding indexes over the knowledge base and exact cosine retrieval.

Three indexes exist, one per granularity: modules (keyed by module id),
methods (keyed by method id) and chunks (keyed by ``(method_id, ordinal)``).
Retrieval is an exhaustive scan; ties in similarity are broken by ascending
element id so rankings are reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import httpx
import numpy as np

from .backends import RetryPolicy
from .errors import ArgumentError, BackendError, ConfigError, IntegrityError, ParseError, TransientBackendError
from .knowledge import KnowledgeBase

GRANULARITIES = ("module", "method", "chunk")
INDEX_FILES = {"module": "modules.vec", "method": "methods.vec", "chunk": "chunks.vec"}

_TOKEN = re.compile(r"[a-z0-9]+")
_MAGIC = b"SEMFLVEC1\n"
TIE_DECIMALS = 12


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def token_bucket(token: str, dimension: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dimension


class Embedder:
    kind = "abstract"
    dimension: int

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension}


class HashEmbedder(Embedder):
    """Offline bag-of-words embedder: hashed token counts, L2-normalized.

    A text with no alphanumeric token maps to the zero vector.
    """

    kind = "hash"

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ArgumentError("dimension must be positive")
        self.dimension = dimension

    def embed_many(self, texts):
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            if not text or not text.strip():
                raise ArgumentError("cannot embed empty text")
            for tok in tokenize(text):
                out[row, token_bucket(tok, self.dimension)] += 1.0
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class RemoteEmbedder(Embedder):
    """HTTP embedder: POST ``{model, input: [texts]}`` returns ``{embeddings: [[...]]}``."""

    kind = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        dimension: int,
        api_key_env: str = "SEMFL_EMBED_API_KEY",
        batch_size: int = 64,
        timeout: float = 60.0,
        retry: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        if not base_url:
            raise ConfigError("remote embedder needs a base URL")
        self.model = model
        self.dimension = dimension
        self.batch_size = batch_size
        self.retry = retry or RetryPolicy()
        key = os.environ.get(api_key_env, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)

    def describe(self):
        return {"kind": self.kind, "dimension": self.dimension, "model": self.model}

    def _post(self, batch):
        try:
            resp = self._client.post("/embeddings", json={"model": self.model, "input": batch})
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport error: {type(exc).__name__}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        if "embeddings" in data:
            return data["embeddings"]
        items = data["data"]
        if all("index" in d for d in items):
            items = sorted(items, key=lambda d: d["index"])
        return [d["embedding"] for d in items]

    def embed_many(self, texts):
        if any(not t or not t.strip() for t in texts):
            raise ArgumentError("cannot embed empty text")
        rows = []
        for i in range(0, len(texts), self.batch_size):
            batch = list(texts[i : i + self.batch_size])
            vecs = self.retry.run(lambda: self._post(batch))
            if len(vecs) != len(batch):
                raise BackendError("embedder returned a different number of vectors")
            rows.extend(vecs)
        arr = np.asarray(rows, dtype=np.float64).reshape(len(texts), -1)
        if arr.shape[1] != self.dimension:
            raise BackendError(f"embedder returned dimension {arr.shape[1]}, expected {self.dimension}")
        return arr


def make_embedder(kind: str, dimension: int = 256, **kw) -> Embedder:
    if kind == "hash":
        return HashEmbedder(dimension)
    if kind == "remote":
        return RemoteEmbedder(dimension=dimension, **kw)
    raise ConfigError(f"unknown embedder kind {kind!r}")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EmbeddingIndex:
    """Immutable id -> vector store for one granularity."""

    granularity: str
    ids: tuple[Hashable, ...]
    vectors: np.ndarray = field(repr=False)
    provenance: tuple[str, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ArgumentError(f"unknown granularity {self.granularity!r}")
        if len(set(self.ids)) != len(self.ids):
            raise IntegrityError("duplicate element ids in index")
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise IntegrityError("vector matrix does not match id count")
        self.vectors.setflags(write=False)

    def __len__(self):
        return len(self.ids)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def restrict(self, keep: Iterable[Hashable]) -> "EmbeddingIndex":
        """Sub-index over ``keep`` (unknown ids are ignored), preserving index order."""
        keep = set(keep)
        rows = [k for k, i in enumerate(self.ids) if i in keep]
        prov = tuple(self.provenance[k] for k in rows) if self.provenance else ()
        return EmbeddingIndex(self.granularity, tuple(self.ids[k] for k in rows), self.vectors[rows], prov)

    def similarities(self, qvec: np.ndarray) -> np.ndarray:
        qn = np.linalg.norm(qvec)
        norms = np.linalg.norm(self.vectors, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = (self.vectors @ qvec) / (norms * qn)
        sims = np.where((norms == 0) | (qn == 0), 0.0, sims)
        return np.clip(sims, -1.0, 1.0)

    def save(self, path: str | Path) -> None:
        """Flat file: magic, JSON header line, then per record a JSON line and raw float64 vector."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"granularity": self.granularity, "dimension": self.dimension, "count": len(self)}
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            for k, eid in enumerate(self.ids):
                rec = [list(eid) if isinstance(eid, tuple) else eid, self.provenance[k] if self.provenance else ""]
                fh.write(json.dumps(rec, ensure_ascii=False).encode("utf-8") + b"\n")
                fh.write(self.vectors[k].astype("<f8").tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingIndex":
        with open(path, "rb") as fh:
            if fh.readline() != _MAGIC:
                raise ParseError(f"{path}: not an index file")
            header = json.loads(fh.readline())
            dim, n = int(header["dimension"]), int(header["count"])
            ids, prov, rows = [], [], []
            for _ in range(n):
                eid, p = json.loads(fh.readline())
                ids.append(tuple(eid) if isinstance(eid, list) else eid)
                prov.append(p)
                buf = fh.read(8 * dim)
                if len(buf) != 8 * dim:
                    raise ParseError(f"{path}: truncated vector record")
                rows.append(np.frombuffer(buf, dtype="<f8"))
        vectors = np.vstack(rows) if rows else np.zeros((0, dim))
        return cls(header["granularity"], tuple(ids), vectors.astype(np.float64), tuple(prov))


def embed(e: Embedder, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise ArgumentError("cannot embed empty text")
    return e.embed(text)


def index_documents(kb: KnowledgeBase, granularity: str) -> list[tuple[Hashable, str]]:
    """(element id, embedded text) pairs for one granularity, in id order."""
    if granularity == "module":
        return [(g, kb.module_text(g)) for g in sorted(kb.module_reports)]
    if granularity == "method":
        return [(m, kb.method_text(m)) for m in sorted(kb.method_reports)]
    if granularity == "chunk":
        return [(c, kb.chunk_text(c)) for m in sorted(kb.method_reports) for c in kb.chunks_of(m)]
    raise ArgumentError(f"unknown granularity {granularity!r}")


def build_index(e: Embedder, kb: KnowledgeBase, granularity: str) -> EmbeddingIndex:
    docs = index_documents(kb, granularity)
    for eid, text in docs:
        if not text.strip():
            raise ArgumentError(f"{granularity} element {eid!r} has empty knowledge text")
    vectors = e.embed_many([t for _, t in docs]) if docs else np.zeros((0, e.dimension))
    return EmbeddingIndex(
        granularity,
        tuple(eid for eid, _ in docs),
        np.asarray(vectors, dtype=np.float64),
        tuple(_text_hash(t) for _, t in docs),
    )


def build_indexes(e: Embedder, kb: KnowledgeBase) -> dict[str, EmbeddingIndex]:
    return {g: build_index(e, kb, g) for g in GRANULARITIES}


def save_indexes(indexes: dict[str, EmbeddingIndex], root: str | Path) -> None:
    for g, idx in indexes.items():
        idx.save(Path(root) / INDEX_FILES[g])


def load_indexes(root: str | Path) -> dict[str, EmbeddingIndex]:
    return {g: EmbeddingIndex.load(Path(root) / INDEX_FILES[g]) for g in GRANULARITIES}


def rank_similarities(ids: Sequence[Hashable], sims: np.ndarray, top_k: int) -> list[tuple[Hashable, float]]:
    # rounding makes mathematically equal scores tie exactly, so the id decides
    order = sorted(range(len(ids)), key=lambda k: (-round(float(sims[k]), TIE_DECIMALS), ids[k]))
    return [(ids[k], float(sims[k])) for k in order[:top_k]]


def retrieve(
    index: EmbeddingIndex, query: str | np.ndarray, top_k: int, e: Embedder | None = None
) -> list[tuple[Hashable, float]]:
    """Top ``min(top_k, len(index))`` elements by cosine similarity, descending."""
    if len(index) == 0:
        raise ArgumentError("cannot retrieve from an empty index")
    if top_k < 1:
        raise ArgumentError("top_k must be >= 1")
    if isinstance(query, str):
        if e is None:
            raise ArgumentError("a text query needs an embedder")
        qvec = embed(e, query)
    else:
        qvec = np.asarray(query, dtype=np.float64)
    if qvec.shape != (index.dimension,):
        raise ArgumentError(f"query dimension {qvec.shape} does not match index dimension {index.dimension}")
    return rank_similarities(index.ids, index.similarities(qvec), top_k)
