"""Okapi BM25 over the passage store.

Analyzer: lowercase + unicode word segmentation, no stemming, no stopwords.
IDF uses the ln(1 + (N - df + 0.5)/(df + 0.5)) form so scores stay positive
even for terms present in almost every passage. Duplicate query terms
contribute once per occurrence. Passages containing no query term are never
returned.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Passage, load_passages
from .errors import EmptyCorpusError

logger = logging.getLogger(__name__)

INDEX_NAME = "bm25-v1.json"

_WORD = re.compile(r"\w+", re.UNICODE)


def analyze(text: str) -> list[str]:
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class ScoredHit:
    passage_id: str
    score: float
    rank: int


@dataclass
class Bm25Index:
    corpus_id: str
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    N: int
    k1: float = 1.2
    b: float = 0.75
    _idf: dict[str, float] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")

    def idf(self, term: str) -> float:
        cached = self._idf.get(term)
        if cached is None:
            df = len(self.postings.get(term, ()))
            cached = math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))
            self._idf[term] = cached
        return cached


def build_index(
    corpus_id: str,
    k1: float = 1.2,
    b: float = 0.75,
    *,
    root: str | Path,
    persist: bool = True,
) -> Bm25Index:
    passages = load_passages(corpus_id, root)
    if not passages:
        raise EmptyCorpusError(f"corpus {corpus_id!r} has no passages")
    index = index_passages(passages, corpus_id=corpus_id, k1=k1, b=b)
    if persist:
        _persist(index, Path(root) / corpus_id / INDEX_NAME)
    return index


def index_passages(
    passages: list[Passage], *, corpus_id: str, k1: float = 1.2, b: float = 0.75
) -> Bm25Index:
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for passage in sorted(passages, key=lambda p: p.passage_id):
        terms = analyze(passage.text)
        doc_lengths[passage.passage_id] = len(terms)
        for term, tf in sorted(Counter(terms).items()):
            postings.setdefault(term, []).append((passage.passage_id, tf))
    n = len(passages)
    avg = sum(doc_lengths.values()) / n
    return Bm25Index(
        corpus_id=corpus_id,
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        N=n,
        k1=k1,
        b=b,
    )


def bm25_search(index: Bm25Index, query: str, k: int) -> list[ScoredHit]:
    """Top-k passages by Okapi BM25 score; no-term-in-common passages excluded."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    terms = analyze(query)
    if not terms:
        logger.warning("query %r tokenizes to zero terms", query)
        return []
    scores: dict[str, float] = {}
    for term in terms:
        posting = index.postings.get(term)
        if not posting:
            continue
        idf = index.idf(term)
        for passage_id, tf in posting:
            length_norm = index.k1 * (
                1 - index.b + index.b * index.doc_lengths[passage_id] / index.avg_doc_length
            )
            contribution = idf * tf * (index.k1 + 1) / (tf + length_norm)
            scores[passage_id] = scores.get(passage_id, 0.0) + contribution
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return [
        ScoredHit(passage_id=pid, score=score, rank=rank)
        for rank, (pid, score) in enumerate(ranked, start=1)
    ]


def _persist(index: Bm25Index, path: Path) -> None:
    record = {
        "format_version": 1,
        "corpus_id": index.corpus_id,
        "k1": index.k1,
        "b": index.b,
        "N": index.N,
        "avg_doc_length": index.avg_doc_length,
        "doc_lengths": index.doc_lengths,
        "postings": {term: entries for term, entries in sorted(index.postings.items())},
    }
    path.write_text(
        json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_index(corpus_id: str, root: str | Path) -> Bm25Index:
    path = Path(root) / corpus_id / INDEX_NAME
    record = json.loads(path.read_text(encoding="utf-8"))
    if record.get("format_version") != 1:
        raise ValueError(f"unsupported index format in {path}")
    return Bm25Index(
        corpus_id=record["corpus_id"],
        postings={
            term: [(pid, tf) for pid, tf in entries]
            for term, entries in record["postings"].items()
        },
        doc_lengths=record["doc_lengths"],
        avg_doc_length=record["avg_doc_length"],
        N=record["N"],
        k1=record["k1"],
        b=record["b"],
    )
