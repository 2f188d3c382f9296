"""Ranking metrics and their aggregation.

All metrics return None when undefined for a query (no relevant passages, no
graded gains, rank overlap too small). Aggregation excludes None values and
reports how many were excluded, per metric, rather than coercing them to zero.

Aggregation is two-stage: mean over queries within each judgment backend,
then an unweighted mean across backends.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence, Set
from dataclasses import dataclass, field

from .rerank import Judgment


def recall_at_k(ranked: Sequence[str], relevant: Set[str], k: int) -> float | None:
    """Fraction of relevant passages found in the top k. None if none exist."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        return None
    hits = sum(1 for pid in ranked[:k] if pid in relevant)
    return hits / len(relevant)


def precision_at_k(ranked: Sequence[str], relevant: Set[str], k: int) -> float | None:
    """Fraction of the top k that is relevant. None if nothing is relevant."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        return None
    hits = sum(1 for pid in ranked[:k] if pid in relevant)
    return hits / k


def dcg(gains: Sequence[float]) -> float:
    # Position discount log2(i+1) with 1-based i; gains arrive in rank order.
    return sum(g / math.log2(i + 1) for i, g in enumerate(gains, start=1))


def ndcg_at_k(
    ranked: Sequence[str], gains: Mapping[str, float], k: int
) -> float | None:
    """DCG of the top k over the ideal DCG. None when no positive gain exists."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ideal = sorted((g for g in gains.values() if g > 0), reverse=True)[:k]
    if not ideal:
        return None
    observed = [max(gains.get(pid, 0.0), 0.0) for pid in ranked[:k]]
    return dcg(observed) / dcg(ideal)


def kendall_tau(
    ranked_a: Sequence[str], ranked_b: Sequence[str], k: int
) -> float | None:
    """Kendall tau-b between two rankings, restricted to the passages both
    place in their top k. None when fewer than two passages are shared."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    pos_a = {pid: i for i, pid in enumerate(ranked_a[:k])}
    pos_b = {pid: i for i, pid in enumerate(ranked_b[:k])}
    common = sorted(set(pos_a) & set(pos_b), key=lambda pid: pos_a[pid])
    n = len(common)
    if n < 2:
        return None
    # Positions within the common set are distinct, so there are no ties and
    # integer pair counts give exact ±1.0 for identical / reversed orders.
    y = [pos_b[pid] for pid in common]
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            if y[i] < y[j]:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (n * (n - 1) // 2)


# --- per-query evaluation -------------------------------------------------

GAIN_BINARY = "binary"
GAIN_GRADED = "graded"


@dataclass(frozen=True)
class RetrievalEval:
    """One retrieval system's scores for one query, against one judgment."""

    query_id: str
    system_id: str
    backend_id: str
    evaluable: bool
    metrics: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "system_id": self.system_id,
            "backend_id": self.backend_id,
            "evaluable": self.evaluable,
            "metrics": self.metrics,
        }


def metric_keys(k_grid: Sequence[int]) -> list[str]:
    keys = []
    for name in ("recall", "precision", "ndcg", "tau"):
        keys.extend(f"{name}@{k}" for k in k_grid)
    return keys


_METRIC_RANK = {"recall": 0, "precision": 1, "ndcg": 2, "tau": 3}


def _metric_order(key: str) -> tuple:
    # Depth-major, then the order evaluate_query computes in. Keys must sort
    # the same whether they arrive fresh or alphabetized by a JSON roundtrip.
    name, _, depth = key.partition("@")
    try:
        k = int(depth)
    except ValueError:
        k = -1
    return (k, _METRIC_RANK.get(name, len(_METRIC_RANK)), name)


def evaluate_query(
    query_id: str,
    system_id: str,
    ranked: Sequence[str],
    judgment: Judgment,
    k_grid: Sequence[int],
    gain_mode: str = GAIN_GRADED,
) -> RetrievalEval:
    if gain_mode not in (GAIN_BINARY, GAIN_GRADED):
        raise ValueError(f"unknown gain_mode {gain_mode!r}")
    relevant = judgment.relevant_set
    if gain_mode == GAIN_GRADED:
        gains = judgment.gains
    else:
        gains = {pid: 1.0 for pid in relevant}
    evaluable = bool(relevant)
    metrics: dict[str, float | None] = {}
    for k in k_grid:
        metrics[f"recall@{k}"] = recall_at_k(ranked, relevant, k)
        metrics[f"precision@{k}"] = precision_at_k(ranked, relevant, k)
        metrics[f"ndcg@{k}"] = ndcg_at_k(ranked, gains, k)
        metrics[f"tau@{k}"] = kendall_tau(ranked, judgment.ranked, k)
    return RetrievalEval(
        query_id=query_id,
        system_id=system_id,
        backend_id=judgment.backend_id,
        evaluable=evaluable,
        metrics=metrics,
    )


# --- aggregation ----------------------------------------------------------


@dataclass
class AggregateReport:
    system_id: str
    backend_ids: list[str]
    # backend_id -> metric -> mean over queries with a defined value
    per_backend: dict[str, dict[str, float | None]]
    # metric -> unweighted mean over backends
    overall: dict[str, float | None]
    n_queries: dict[str, int]
    n_unevaluable: dict[str, int]
    # backend_id -> metric -> queries excluded for that metric
    excluded: dict[str, dict[str, int]]

    def to_dict(self) -> dict:
        return {
            "system_id": self.system_id,
            "backend_ids": self.backend_ids,
            "per_backend": self.per_backend,
            "overall": self.overall,
            "n_queries": self.n_queries,
            "n_unevaluable": self.n_unevaluable,
            "excluded": self.excluded,
        }


def aggregate_evals(evals: Sequence[RetrievalEval]) -> AggregateReport:
    if not evals:
        raise ValueError("nothing to aggregate")
    system_ids = {e.system_id for e in evals}
    if len(system_ids) != 1:
        raise ValueError(f"mixed systems in one aggregate: {sorted(system_ids)}")
    system_id = next(iter(system_ids))

    keys: list[str] = []
    for e in evals:
        for key in e.metrics:
            if key not in keys:
                keys.append(key)
    keys.sort(key=_metric_order)

    by_backend: dict[str, list[RetrievalEval]] = {}
    for e in evals:
        by_backend.setdefault(e.backend_id, []).append(e)
    backend_ids = sorted(by_backend)

    per_backend: dict[str, dict[str, float | None]] = {}
    n_queries: dict[str, int] = {}
    n_unevaluable: dict[str, int] = {}
    excluded: dict[str, dict[str, int]] = {}
    for bid in backend_ids:
        group = by_backend[bid]
        n_queries[bid] = len(group)
        n_unevaluable[bid] = sum(1 for e in group if not e.evaluable)
        means: dict[str, float | None] = {}
        skips: dict[str, int] = {}
        for key in keys:
            values = [
                e.metrics[key]
                for e in group
                if key in e.metrics and e.metrics[key] is not None
            ]
            skips[key] = len(group) - len(values)
            means[key] = sum(values) / len(values) if values else None
        per_backend[bid] = means
        excluded[bid] = skips

    overall: dict[str, float | None] = {}
    for key in keys:
        values = [
            per_backend[bid][key]
            for bid in backend_ids
            if per_backend[bid][key] is not None
        ]
        overall[key] = sum(values) / len(values) if values else None

    return AggregateReport(
        system_id=system_id,
        backend_ids=backend_ids,
        per_backend=per_backend,
        overall=overall,
        n_queries=n_queries,
        n_unevaluable=n_unevaluable,
        excluded=excluded,
    )


# --- rendering ------------------------------------------------------------


def _cell(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def render_report_table(report: AggregateReport) -> str:
    """Plain-text table: one metric per row, one column per backend plus the
    cross-backend mean."""
    headers = ["metric", *report.backend_ids, "mean"]
    rows = []
    for key in report.overall:
        row = [key]
        row.extend(_cell(report.per_backend[bid][key]) for bid in report.backend_ids)
        row.append(_cell(report.overall[key]))
        rows.append(row)
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)))
    footer = [
        f"queries per backend: "
        + ", ".join(f"{bid}={report.n_queries[bid]}" for bid in report.backend_ids),
        f"unevaluable: "
        + ", ".join(f"{bid}={report.n_unevaluable[bid]}" for bid in report.backend_ids),
    ]
    return "\n".join(lines + footer) + "\n"


def render_report_csv(report: AggregateReport) -> str:
    lines = [",".join(["metric", *report.backend_ids, "mean"])]
    for key in report.overall:
        cells = [key]
        cells.extend(_cell(report.per_backend[bid][key]) for bid in report.backend_ids)
        cells.append(_cell(report.overall[key]))
        lines.append(",".join(cells))
    return "".join(line + "\n" for line in lines)


def evals_to_jsonl(evals: Sequence[RetrievalEval]) -> str:
    return "".join(
        json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"
        for e in evals
    )


def report_to_json(report: AggregateReport) -> str:
    return json.dumps(report.to_dict(), ensure_ascii=False, sort_keys=True, indent=2)
