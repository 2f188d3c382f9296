"""Negative mining for the context-relevance dataset.

Two strategies: random negatives are drawn from other documents, scored
against the query, and the least-relevant k kept; in-document negatives take
the least-relevant k passages of the positive's own document (harder, since
they share topic). Default is one negative per strategy per query.

Per-query randomness is derived from (seed, query_id), so dataset content is
independent of input order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field

from . import backend as backend_client
from .backend import BackendProfile
from .corpus import Passage, Query

logger = logging.getLogger(__name__)

STRATEGY_POSITIVE = "positive"
STRATEGY_RANDOM = "random_negative"
STRATEGY_INDOC = "in_document_negative"


@dataclass(frozen=True)
class DatasetItem:
    query_id: str
    query_text: str
    passage_id: str
    passage_text: str
    label: bool
    strategy: str


@dataclass
class ContextRelevanceDataset:
    items: list[DatasetItem]
    negatives_per_query: int
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MiningConfig:
    n_random: int = 1
    n_indoc: int = 1
    pool_size: int = 256
    seed: int = 0


def _query_seed(seed: int, query_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{query_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _least_k(
    query: Query,
    candidates: list[Passage],
    scorer: BackendProfile,
    k: int,
) -> list[Passage]:
    raw = backend_client.rerank_score(scorer, query.text, [p.text for p in candidates])
    scored = sorted(zip(raw, candidates), key=lambda pair: (pair[0], pair[1].passage_id))
    return [passage for _, passage in scored[:k]]


def mine_random_negatives(
    query: Query,
    positive: Passage,
    passages: list[Passage],
    scorer: BackendProfile,
    pool_size: int = 256,
    k: int = 1,
    seed: int = 0,
) -> list[Passage]:
    """Sample cross-document candidates, keep the k least relevant."""
    if not pool_size >= k >= 1:
        raise ValueError(f"need pool_size >= k >= 1, got {pool_size}, {k}")
    eligible = sorted(
        (p for p in passages if p.doc_id != positive.doc_id),
        key=lambda p: p.passage_id,
    )
    if not eligible:
        raise ValueError(
            f"no passages outside document {positive.doc_id!r} to mine from"
        )
    if len(eligible) < pool_size:
        logger.warning(
            "query %s: pool shrunk to %d eligible passages (wanted %d)",
            query.query_id, len(eligible), pool_size,
        )
        pool = eligible
    else:
        rng = random.Random(_query_seed(seed, query.query_id))
        pool = rng.sample(eligible, pool_size)
    return _least_k(query, pool, scorer, min(k, len(pool)))


def mine_indoc_negatives(
    query: Query,
    positive: Passage,
    passages: list[Passage],
    scorer: BackendProfile,
    k: int = 1,
) -> list[Passage]:
    """Keep the k least relevant passages from the positive's own document."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    candidates = sorted(
        (
            p
            for p in passages
            if p.doc_id == positive.doc_id and p.passage_id != positive.passage_id
        ),
        key=lambda p: p.passage_id,
    )
    if len(candidates) < k:
        logger.warning(
            "query %s: only %d in-document candidates (wanted %d)",
            query.query_id, len(candidates), k,
        )
    if not candidates:
        return []
    return _least_k(query, candidates, scorer, min(k, len(candidates)))


def build_dataset(
    pairs: list[tuple[Query, Passage]],
    config: MiningConfig,
    passages: list[Passage],
    scorer: BackendProfile,
) -> ContextRelevanceDataset:
    """Assemble positives plus mined negatives into one labeled dataset."""
    seen: set[str] = set()
    for query, _ in pairs:
        if query.query_id in seen:
            raise ValueError(f"duplicate query_id {query.query_id!r}")
        seen.add(query.query_id)

    items: list[DatasetItem] = []
    for query, positive in pairs:
        items.append(
            DatasetItem(
                query_id=query.query_id,
                query_text=query.text,
                passage_id=positive.passage_id,
                passage_text=positive.text,
                label=True,
                strategy=STRATEGY_POSITIVE,
            )
        )
        negatives: list[tuple[Passage, str]] = []
        if config.n_random:
            negatives.extend(
                (p, STRATEGY_RANDOM)
                for p in mine_random_negatives(
                    query, positive, passages, scorer,
                    pool_size=config.pool_size, k=config.n_random, seed=config.seed,
                )
            )
        if config.n_indoc:
            negatives.extend(
                (p, STRATEGY_INDOC)
                for p in mine_indoc_negatives(
                    query, positive, passages, scorer, k=config.n_indoc
                )
            )
        for passage, strategy in negatives:
            items.append(
                DatasetItem(
                    query_id=query.query_id,
                    query_text=query.text,
                    passage_id=passage.passage_id,
                    passage_text=passage.text,
                    label=False,
                    strategy=strategy,
                )
            )
    return ContextRelevanceDataset(
        items=items,
        negatives_per_query=config.n_random + config.n_indoc,
        metadata={
            "n_random": config.n_random,
            "n_indoc": config.n_indoc,
            "pool_size": config.pool_size,
            "seed": config.seed,
            "scorer": scorer.backend_id,
        },
    )


def dataset_to_jsonl(dataset: ContextRelevanceDataset) -> str:
    lines = []
    for item in dataset.items:
        lines.append(
            json.dumps(
                {
                    "query_id": item.query_id,
                    "query_text": item.query_text,
                    "passage_id": item.passage_id,
                    "passage_text": item.passage_text,
                    "label": item.label,
                    "strategy": item.strategy,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    return "".join(line + "\n" for line in lines)


def dataset_from_jsonl(
    text: str, negatives_per_query: int | None = None
) -> ContextRelevanceDataset:
    items = []
    for line in text.splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        items.append(
            DatasetItem(
                query_id=record["query_id"],
                query_text=record["query_text"],
                passage_id=record["passage_id"],
                passage_text=record["passage_text"],
                label=bool(record["label"]),
                strategy=record["strategy"],
            )
        )
    if negatives_per_query is None:
        negatives = sum(1 for item in items if not item.label)
        queries = len({item.query_id for item in items})
        negatives_per_query = negatives // queries if queries else 0
    return ContextRelevanceDataset(items=items, negatives_per_query=negatives_per_query)
