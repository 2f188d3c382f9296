"""Reranker scoring, relevance classification, and proxy ground truth.

Raw backend scores are calibrated to probabilities: logits go through the
logistic function, backends that declare ``normalized`` pass through as-is.
Ground truth for retrieval evaluation is built per query by pulling a BM25
candidate pool and letting each reranker classify and reorder it; the pool
is kept with the judgments so out-of-pool retrievals stay detectable.

Rerankers are ensembled at the metric level (judgments stay per backend and
metric values are averaged downstream); a score-mean ensemble judgment is
available but never the default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

from . import backend as backend_client
from .backend import BackendProfile
from .corpus import Passage, Query
from .lexical import Bm25Index, bm25_search


@dataclass(frozen=True)
class RerankScore:
    query_id: str
    passage_id: str
    backend_id: str
    raw_score: float
    probability: float
    relevant: bool


@dataclass(frozen=True)
class Judgment:
    query_id: str
    backend_id: str
    ranked: tuple[str, ...]
    relevant_set: frozenset[str]
    gains: dict[str, float]


@dataclass(frozen=True)
class GroundTruth:
    """Per-query judgments plus the candidate pool they were built from."""

    query_id: str
    pool: tuple[str, ...]
    judgments: tuple[Judgment, ...]

    @property
    def unevaluable(self) -> bool:
        return not self.pool


def calibrate(raw_score: float, normalized: bool) -> float:
    if normalized:
        return raw_score
    return 1.0 / (1.0 + math.exp(-raw_score))


def rerank_pairs(
    query: Query,
    candidates: list[Passage],
    backend: BackendProfile,
    threshold: float = 0.5,
) -> list[RerankScore]:
    """Score each (query, candidate) pair; one RerankScore per candidate."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    raw_scores = backend_client.rerank_score(
        backend, query.text, [p.text for p in candidates]
    )
    scores = []
    for passage, raw in zip(candidates, raw_scores):
        probability = calibrate(raw, backend.normalized)
        scores.append(
            RerankScore(
                query_id=query.query_id,
                passage_id=passage.passage_id,
                backend_id=backend.backend_id,
                raw_score=raw,
                probability=probability,
                relevant=probability >= threshold,
            )
        )
    return scores


def classify_context(
    scores: list[RerankScore], threshold: float
) -> list[RerankScore]:
    """Re-flag relevance at the given threshold (>= is relevant); idempotent."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return [replace(s, relevant=s.probability >= threshold) for s in scores]


def make_judgment(scores: list[RerankScore]) -> Judgment:
    gains = {s.passage_id: s.probability for s in scores}
    ranked = tuple(
        s.passage_id
        for s in sorted(scores, key=lambda s: (-s.probability, s.passage_id))
    )
    return Judgment(
        query_id=scores[0].query_id,
        backend_id=scores[0].backend_id,
        ranked=ranked,
        relevant_set=frozenset(s.passage_id for s in scores if s.relevant),
        gains=gains,
    )


def ensemble_judgment(judgments: list[Judgment], threshold: float = 0.5) -> Judgment:
    """Score-mean ensemble over per-backend judgments of one query."""
    if not judgments:
        raise ValueError("need at least one judgment")
    query_id = judgments[0].query_id
    pids = sorted({pid for j in judgments for pid in j.gains})
    gains = {
        pid: sum(j.gains.get(pid, 0.0) for j in judgments) / len(judgments)
        for pid in pids
    }
    ranked = tuple(sorted(pids, key=lambda pid: (-gains[pid], pid)))
    return Judgment(
        query_id=query_id,
        backend_id="ensemble",
        ranked=ranked,
        relevant_set=frozenset(pid for pid in pids if gains[pid] >= threshold),
        gains=gains,
    )


def build_ground_truth(
    query: Query,
    index: Bm25Index,
    backends: list[BackendProfile],
    passages_by_id: dict[str, Passage],
    candidate_k: int = 100,
    threshold: float = 0.5,
) -> GroundTruth:
    """BM25 top-candidate_k pool, classified and reranked by each backend."""
    if candidate_k < 1:
        raise ValueError(f"candidate_k must be >= 1, got {candidate_k}")
    if not backends:
        raise ValueError("need at least one rerank backend")
    hits = bm25_search(index, query.text, candidate_k)
    pool = tuple(hit.passage_id for hit in hits)
    if not pool:
        return GroundTruth(query_id=query.query_id, pool=(), judgments=())
    candidates = [passages_by_id[pid] for pid in pool]
    judgments = []
    for backend in backends:
        scores = rerank_pairs(query, candidates, backend, threshold=threshold)
        judgments.append(make_judgment(scores))
    return GroundTruth(query_id=query.query_id, pool=pool, judgments=tuple(judgments))


# ── serialization ────────────────────────────────────────────────────

def judgment_to_json(judgment: Judgment) -> str:
    return json.dumps(
        {
            "query_id": judgment.query_id,
            "backend_id": judgment.backend_id,
            "ranked": list(judgment.ranked),
            "relevant_set": sorted(judgment.relevant_set),
            "gains": {pid: judgment.gains[pid] for pid in sorted(judgment.gains)},
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def judgment_from_json(line: str) -> Judgment:
    record = json.loads(line)
    return Judgment(
        query_id=record["query_id"],
        backend_id=record["backend_id"],
        ranked=tuple(record["ranked"]),
        relevant_set=frozenset(record["relevant_set"]),
        gains=record["gains"],
    )


# ── classifier evaluation ────────────────────────────────────────────

@dataclass(frozen=True)
class LabelMetrics:
    precision: float | None
    recall: float | None
    f1: float | None
    support: int


@dataclass(frozen=True)
class ClassifierReport:
    backend_id: str
    subset: str
    tp: int
    fp: int
    fn: int
    tn: int
    irrelevant: LabelMetrics
    relevant: LabelMetrics
    macro: LabelMetrics
    accuracy: float

    def to_dict(self) -> dict:
        def label_dict(m: LabelMetrics) -> dict:
            return {
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
            }

        return {
            "backend_id": self.backend_id,
            "subset": self.subset,
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "irrelevant_context": label_dict(self.irrelevant),
            "relevant_context": label_dict(self.relevant),
            "macro_avg": label_dict(self.macro),
            "accuracy": self.accuracy,
        }


def _prf(tp: int, fp: int, fn: int, support: int) -> LabelMetrics:
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    if support == 0:
        return LabelMetrics(precision=None, recall=None, f1=None, support=0)
    if precision is None or recall is None or precision + recall == 0:
        f1 = 0.0 if recall is not None else None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return LabelMetrics(precision=precision, recall=recall, f1=f1, support=support)


def _mean_or_none(values: list[float | None]) -> float | None:
    if any(v is None for v in values):
        return None
    return sum(values) / len(values)


def report_from_counts(
    tp: int, fp: int, fn: int, tn: int, *, backend_id: str, subset: str = ""
) -> ClassifierReport:
    """Per-label precision/recall/F1, macro average, and accuracy."""
    total = tp + fp + fn + tn
    if total == 0:
        raise ValueError("empty confusion counts")
    # Positive class = relevant; the irrelevant row treats irrelevant as positive.
    relevant = _prf(tp=tp, fp=fp, fn=fn, support=tp + fn)
    irrelevant = _prf(tp=tn, fp=fn, fn=fp, support=tn + fp)
    macro = LabelMetrics(
        precision=_mean_or_none([irrelevant.precision, relevant.precision]),
        recall=_mean_or_none([irrelevant.recall, relevant.recall]),
        f1=_mean_or_none([irrelevant.f1, relevant.f1]),
        support=total,
    )
    return ClassifierReport(
        backend_id=backend_id,
        subset=subset,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        irrelevant=irrelevant,
        relevant=relevant,
        macro=macro,
        accuracy=(tp + tn) / total,
    )


def evaluate_reranker_classifier(
    dataset,
    backend: BackendProfile,
    threshold: float = 0.5,
    subset: str = "",
) -> ClassifierReport:
    """Score every dataset item and compare predictions against labels."""
    items = dataset.items
    if not items:
        raise ValueError("dataset is empty")
    tp = fp = fn = tn = 0
    for item in items:
        raw = backend_client.rerank_score(backend, item.query_text, [item.passage_text])
        predicted = calibrate(raw[0], backend.normalized) >= threshold
        if item.label and predicted:
            tp += 1
        elif item.label and not predicted:
            fn += 1
        elif not item.label and predicted:
            fp += 1
        else:
            tn += 1
    return report_from_counts(
        tp, fp, fn, tn, backend_id=backend.backend_id, subset=subset
    )


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def render_classifier_report(report: ClassifierReport) -> str:
    """Tabular view: Irrelevant Context / Relevant Context / Macro Avg / Accuracy."""
    lines = []
    title = report.backend_id if not report.subset else f"{report.subset} / {report.backend_id}"
    lines.append(title)
    lines.append(f"{'Label':<20} {'Precision':>10} {'Recall':>10} {'F1-Score':>10}")
    for label, m in (
        ("Irrelevant Context", report.irrelevant),
        ("Relevant Context", report.relevant),
        ("Macro Avg", report.macro),
    ):
        lines.append(
            f"{label:<20} {_fmt(m.precision):>10} {_fmt(m.recall):>10} {_fmt(m.f1):>10}"
        )
    lines.append(f"{'Accuracy':<20} {_fmt(report.accuracy):>10}")
    return "\n".join(lines) + "\n"
