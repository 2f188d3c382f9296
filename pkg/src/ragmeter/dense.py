"""Dense retrieval: embed the corpus once, answer cosine top-k queries exactly.

No approximate index: corpora here are single-collection scale and an exact
scan keeps retrieval metrics free of recall noise. Vectors are stored as
float32 records behind a one-line JSON header; scoring happens in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend as backend_client
from .backend import BackendProfile
from .corpus import load_passages
from .errors import ConfigError, DimensionDriftError, EmptyCorpusError
from .lexical import ScoredHit

STORE_VERSION = 1


@dataclass
class VectorStore:
    corpus_id: str
    backend_id: str
    dim: int
    passage_ids: list[str]
    matrix: np.ndarray  # float32, shape (count, dim)
    norms: np.ndarray  # float64, shape (count,)

    def __len__(self) -> int:
        return len(self.passage_ids)

    def vector(self, passage_id: str) -> np.ndarray:
        return self.matrix[self.passage_ids.index(passage_id)]


def cosine_similarity(q: np.ndarray, p: np.ndarray) -> float:
    """sim(q, p) = q.p / (|q| |p|), in [-1, 1]; undefined for zero vectors."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {p.shape}")
    qn = math.sqrt(float(np.dot(q, q)))
    pn = math.sqrt(float(np.dot(p, p)))
    if qn == 0.0 or pn == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return max(-1.0, min(1.0, float(np.dot(q, p)) / (qn * pn)))


def store_filename(backend_id: str) -> str:
    return f"vectors-{backend_id}.bin"


def _store_path(root: str | Path, corpus_id: str, backend_id: str) -> Path:
    return Path(root) / corpus_id / store_filename(backend_id)


def embed_corpus(
    corpus_id: str,
    backend: BackendProfile,
    batch_size: int = 32,
    *,
    root: str | Path,
    persist: bool = True,
) -> VectorStore:
    """Embed every passage with one backend; abort on mid-run dimension drift."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    passages = load_passages(corpus_id, root)
    if not passages:
        raise EmptyCorpusError(f"corpus {corpus_id!r} has no passages")
    prefix = backend.passage_prefix or ""
    ids = [p.passage_id for p in passages]
    texts = [prefix + p.text for p in passages]

    rows: list[np.ndarray] = []
    dim: int | None = None
    for start in range(0, len(texts), batch_size):
        batch = backend_client.embed(backend, texts[start : start + batch_size])
        for vector in batch:
            if dim is None:
                dim = vector.shape[0]
            elif vector.shape[0] != dim:
                raise DimensionDriftError(
                    f"{backend.backend_id}: dim {vector.shape[0]} after {dim}; "
                    f"partial store discarded"
                )
            rows.append(vector)

    matrix = np.vstack(rows).astype(np.float32)
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"{backend.backend_id} produced a zero vector")
    store = VectorStore(
        corpus_id=corpus_id,
        backend_id=backend.backend_id,
        dim=int(dim),
        passage_ids=ids,
        matrix=matrix,
        norms=norms,
    )
    if persist:
        save_store(store, _store_path(root, corpus_id, backend.backend_id))
    return store


def save_store(store: VectorStore, path: str | Path) -> None:
    header = {
        "format_version": STORE_VERSION,
        "corpus_id": store.corpus_id,
        "backend_id": store.backend_id,
        "dim": store.dim,
        "count": len(store.passage_ids),
        "passage_ids": store.passage_ids,
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        handle.write(np.ascontiguousarray(store.matrix, dtype="<f4").tobytes())


def load_store(corpus_id: str, backend_id: str, root: str | Path) -> VectorStore:
    path = _store_path(root, corpus_id, backend_id)
    with open(path, "rb") as handle:
        header = json.loads(handle.readline().decode("utf-8"))
        if header.get("format_version") != STORE_VERSION:
            raise ValueError(f"unsupported vector store format in {path}")
        count, dim = header["count"], header["dim"]
        matrix = np.frombuffer(handle.read(count * dim * 4), dtype="<f4").reshape(
            count, dim
        )
    return VectorStore(
        corpus_id=header["corpus_id"],
        backend_id=header["backend_id"],
        dim=dim,
        passage_ids=header["passage_ids"],
        matrix=matrix,
        norms=np.linalg.norm(matrix.astype(np.float64), axis=1),
    )


def dump_store(store: VectorStore) -> list[str]:
    """JSON Lines view of the store for inspection."""
    lines = []
    for i, pid in enumerate(store.passage_ids):
        lines.append(
            json.dumps(
                {"passage_id": pid, "values": store.matrix[i].tolist()},
                sort_keys=True,
            )
        )
    return lines


def dense_search(
    store: VectorStore, query_text: str, backend: BackendProfile, k: int
) -> list[ScoredHit]:
    """Exact top-k by cosine similarity against every stored vector."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if store.backend_id != backend.backend_id:
        raise ConfigError(
            f"store built with {store.backend_id!r} but queried via "
            f"{backend.backend_id!r}"
        )
    prefix = backend.query_prefix or ""
    (query_vec,) = backend_client.embed(backend, [prefix + query_text])
    q = query_vec.astype(np.float64)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("query embedded to a zero vector")
    scores = (store.matrix.astype(np.float64) @ q) / (store.norms * qn)
    order = sorted(
        range(len(store.passage_ids)),
        key=lambda i: (-scores[i], store.passage_ids[i]),
    )[:k]
    return [
        ScoredHit(passage_id=store.passage_ids[i], score=float(scores[i]), rank=rank)
        for rank, i in enumerate(order, start=1)
    ]
