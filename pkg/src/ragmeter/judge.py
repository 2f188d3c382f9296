"""Model-graded evaluation: context relevance and answer quality.

Context relevance is scored 0-3 per (question, passage) pair and summarized
as score-frequency rows per (chunk budget, cutoff, ranking source). Answer
quality runs a noisy-context protocol: the model answers once with the gold
passage hidden among cross-document distractors and once with no context at
all, and judge models grade faithfulness, answer relevance, and noise
robustness on a 1-5 scale plus a yes/no accuracy check against the gold
answer.

Judge replies are parsed leniently (first standalone token in range); an
unparseable reply gets exactly one retry with a terser instruction, then is
excluded from aggregates and counted.
"""

from __future__ import annotations

import hashlib
import logging
import random
import re
import statistics
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from . import backend as backend_client
from .backend import BackendProfile
from .corpus import Passage, Query

logger = logging.getLogger(__name__)

# --- prompts ----------------------------------------------------------------

CONTEXT_RELEVANCE_PROMPT = """\
You are an AI assistant that judges the relevance of a document to a given question. Respond with a score from 0 to 3.

QUESTION: {question}

DOCUMENT: {doc}

Rate how relevant the document is to answering the question using the following scale:

0 = Completely irrelevant
1 = Slightly irrelevant
2 = Slightly relevant
3 = Completely relevant

Respond with a single number between 0 and 3."""

ANSWER_WITH_CONTEXT_PROMPT = """\
Answer the question using the passages below. If the passages do not contain \
the answer, say that they do not.

{passages}

QUESTION: {question}

ANSWER:"""

ANSWER_WITHOUT_CONTEXT_PROMPT = """\
Answer the question from your own knowledge, in one or two sentences.

QUESTION: {question}

ANSWER:"""

FAITHFULNESS_PROMPT = """\
You are grading whether an answer is supported by the passages it was based \
on. Use this scale:

1 = contradicts the passages or is fabricated
2 = mostly unsupported
3 = partially supported
4 = mostly supported, minor unsupported details
5 = every claim is supported by the passages

{passages}

QUESTION: {question}

ANSWER: {answer}

Respond with a single number between 1 and 5."""

ANSWER_RELEVANCE_PROMPT = """\
You are grading whether an answer actually addresses the question asked. Use \
this scale:

1 = does not address the question
2 = mostly off-topic
3 = partially addresses it
4 = addresses it with minor digressions
5 = fully and directly addresses it

QUESTION: {question}

ANSWER: {answer}

Respond with a single number between 1 and 5."""

NOISE_ROBUSTNESS_PROMPT = """\
An answer was written from a set of passages in which only the passage below \
is relevant to the question; the rest were unrelated. Grade how well the \
answer sticks to the relevant passage instead of the unrelated material. Use \
this scale:

1 = built almost entirely on unrelated material
2 = substantially distracted by unrelated material
3 = mixes relevant and unrelated material
4 = minor intrusions of unrelated material
5 = uses only the relevant passage

RELEVANT PASSAGE: {doc}

QUESTION: {question}

ANSWER: {answer}

Respond with a single number between 1 and 5."""

ACCURACY_PROMPT = """\
Decide whether the candidate answer agrees with the reference answer to the \
question. Minor wording differences do not matter; the facts must match.

QUESTION: {question}

REFERENCE ANSWER: {reference}

CANDIDATE ANSWER: {answer}

Respond with yes or no."""

RETRY_SUFFIX_NUMBER = "\n\nRespond with a single number."
RETRY_SUFFIX_YES_NO = "\n\nRespond with yes or no."


def fill(template: str, **values: str) -> str:
    # str.format would choke on braces inside passage text, so substitute
    # placeholders by literal replacement.
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out


# --- reply parsing ----------------------------------------------------------

_SCORE_0_3 = re.compile(r"(?<![0-9.])[0-3](?![0-9])")
_SCORE_1_5 = re.compile(r"(?<![0-9.])[1-5](?![0-9])")
_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_scale_0_3(text: str) -> int | None:
    m = _SCORE_0_3.search(text)
    return int(m.group()) if m else None


def parse_scale_1_5(text: str) -> int | None:
    m = _SCORE_1_5.search(text)
    return int(m.group()) if m else None


def parse_yes_no(text: str) -> bool | None:
    m = _YES_NO.search(text)
    return m.group(1).lower() == "yes" if m else None


def _ask(judge: BackendProfile, prompt: str, parse, retry_suffix: str):
    reply = backend_client.generate(judge, prompt)
    value = parse(reply)
    if value is None:
        reply = backend_client.generate(judge, prompt + retry_suffix)
        value = parse(reply)
        if value is None:
            logger.warning("judge %s: unparseable reply %r", judge.backend_id, reply[:80])
    return value


# --- context relevance ------------------------------------------------------

SOURCE_RETRIEVER = "retriever"
SOURCE_RERANKED = "reranked"


@dataclass(frozen=True)
class RelevanceLabel:
    query_id: str
    passage_id: str
    judge_id: str
    rank: int
    source: str
    chunk_budget: int
    score: int | None

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "passage_id": self.passage_id,
            "judge_id": self.judge_id,
            "rank": self.rank,
            "source": self.source,
            "chunk_budget": self.chunk_budget,
            "score": self.score,
        }


def judge_relevance(question: str, passage_text: str, judge: BackendProfile) -> int | None:
    prompt = fill(CONTEXT_RELEVANCE_PROMPT, question=question, doc=passage_text)
    return _ask(judge, prompt, parse_scale_0_3, RETRY_SUFFIX_NUMBER)


def label_rankings(
    queries: Sequence[Query],
    rankings: Mapping[str, Sequence[str]],
    passages_by_id: Mapping[str, Passage],
    judge: BackendProfile,
    depth: int,
    source: str,
    chunk_budget: int,
) -> list[RelevanceLabel]:
    """Score the top `depth` passages of each query's ranking."""
    if source not in (SOURCE_RETRIEVER, SOURCE_RERANKED):
        raise ValueError(f"unknown ranking source {source!r}")
    labels: list[RelevanceLabel] = []
    for query in queries:
        ranked = rankings.get(query.query_id, ())
        for rank, passage_id in enumerate(ranked[:depth], start=1):
            score = judge_relevance(query.text, passages_by_id[passage_id].text, judge)
            labels.append(
                RelevanceLabel(
                    query_id=query.query_id,
                    passage_id=passage_id,
                    judge_id=judge.backend_id,
                    rank=rank,
                    source=source,
                    chunk_budget=chunk_budget,
                    score=score,
                )
            )
    return labels


@dataclass(frozen=True)
class FrequencyRow:
    """Distribution of relevance scores within one (budget, cutoff, source) cell."""

    chunk_budget: int
    k: int
    source: str
    counts: tuple[int, int, int, int]
    percentages: tuple[float, float, float, float]
    n_scored: int
    n_unparseable: int


def frequency_rows(
    labels: Sequence[RelevanceLabel], k_grid: Sequence[int]
) -> list[FrequencyRow]:
    budgets = sorted({lb.chunk_budget for lb in labels}, reverse=True)
    rows: list[FrequencyRow] = []
    for budget in budgets:
        for k in k_grid:
            for source in (SOURCE_RETRIEVER, SOURCE_RERANKED):
                cell = [
                    lb
                    for lb in labels
                    if lb.chunk_budget == budget
                    and lb.source == source
                    and lb.rank <= k
                ]
                if not cell:
                    continue
                scored = [lb for lb in cell if lb.score is not None]
                counts = [0, 0, 0, 0]
                for lb in scored:
                    counts[lb.score] += 1
                total = len(scored)
                percentages = tuple(
                    100.0 * c / total if total else 0.0 for c in counts
                )
                rows.append(
                    FrequencyRow(
                        chunk_budget=budget,
                        k=k,
                        source=source,
                        counts=tuple(counts),
                        percentages=percentages,
                        n_scored=total,
                        n_unparseable=len(cell) - total,
                    )
                )
    return rows


def render_frequency_table(rows: Sequence[FrequencyRow]) -> str:
    """One panel per chunk budget; within a panel, a Retriever and a Reranked
    line per cutoff, score frequencies as percentages."""
    source_names = {SOURCE_RETRIEVER: "Retriever", SOURCE_RERANKED: "Reranked"}
    lines: list[str] = []
    budgets = sorted({r.chunk_budget for r in rows}, reverse=True)
    for budget in budgets:
        lines.append(f"chunk budget {budget}")
        lines.append(f"{'':<8}{'':<12}{'0':>8}{'1':>8}{'2':>8}{'3':>8}")
        panel = [r for r in rows if r.chunk_budget == budget]
        for k in sorted({r.k for r in panel}):
            for source in (SOURCE_RETRIEVER, SOURCE_RERANKED):
                row = next(
                    (r for r in panel if r.k == k and r.source == source), None
                )
                if row is None:
                    continue
                head = f"Top-{k}" if source == SOURCE_RETRIEVER else ""
                cells = "".join(f"{p:>8.2f}" for p in row.percentages)
                lines.append(f"{head:<8}{source_names[source]:<12}{cells}")
        lines.append("")
    return "\n".join(lines)


# --- noisy-context answer protocol -----------------------------------------

ARM_WITH_CONTEXT = "with_context"
ARM_WITHOUT_CONTEXT = "without_context"

QUALITY_METRICS = ("faithfulness", "answer_relevance", "noise_robustness")


@dataclass(frozen=True)
class NoisyContextItem:
    query_id: str
    question: str
    gold_passage_id: str
    gold_answer: str
    # gold passage plus distractors, already in presentation order
    passage_ids: tuple[str, ...]
    passage_texts: tuple[str, ...]

    @property
    def gold_text(self) -> str:
        return self.passage_texts[self.passage_ids.index(self.gold_passage_id)]


def build_noisy_context(
    query: Query,
    gold: Passage,
    passages: Sequence[Passage],
    n_distractors: int = 4,
    seed: int = 0,
) -> NoisyContextItem:
    """Surround the gold passage with cross-document distractors at a
    seed-determined position."""
    if n_distractors < 0:
        raise ValueError(f"n_distractors must be >= 0, got {n_distractors}")
    if query.gold_answer is None:
        raise ValueError(f"query {query.query_id!r} has no gold answer")
    eligible = sorted(
        (p for p in passages if p.doc_id != gold.doc_id),
        key=lambda p: p.passage_id,
    )
    if len(eligible) < n_distractors:
        raise ValueError(
            f"query {query.query_id!r}: {len(eligible)} cross-document passages "
            f"available, need {n_distractors}"
        )
    digest = hashlib.sha256(f"{seed}:{query.query_id}".encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    distractors = rng.sample(eligible, n_distractors)
    ordered = list(distractors)
    ordered.insert(rng.randint(0, len(ordered)), gold)
    return NoisyContextItem(
        query_id=query.query_id,
        question=query.text,
        gold_passage_id=gold.passage_id,
        gold_answer=query.gold_answer,
        passage_ids=tuple(p.passage_id for p in ordered),
        passage_texts=tuple(p.text for p in ordered),
    )


def _passage_block(texts: Sequence[str]) -> str:
    return "\n\n".join(f"[{i}] {t}" for i, t in enumerate(texts, start=1))


def answer_prompt(item: NoisyContextItem, arm: str) -> str:
    if arm == ARM_WITH_CONTEXT:
        return fill(
            ANSWER_WITH_CONTEXT_PROMPT,
            passages=_passage_block(item.passage_texts),
            question=item.question,
        )
    if arm == ARM_WITHOUT_CONTEXT:
        return fill(ANSWER_WITHOUT_CONTEXT_PROMPT, question=item.question)
    raise ValueError(f"unknown arm {arm!r}")


def generate_answer(item: NoisyContextItem, generator: BackendProfile, arm: str) -> str:
    return backend_client.generate(generator, answer_prompt(item, arm))


@dataclass(frozen=True)
class AnswerEval:
    query_id: str
    arm: str
    answer: str
    # metric -> judge_id -> score (None when unparseable after retry)
    scores: Mapping[str, Mapping[str, int | None]]
    # metric -> mean over judges that produced a score
    ensemble: Mapping[str, float | None]
    accuracy_votes: Mapping[str, bool | None]
    accuracy: bool | None

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "arm": self.arm,
            "answer": self.answer,
            "scores": {m: dict(v) for m, v in self.scores.items()},
            "ensemble": dict(self.ensemble),
            "accuracy_votes": dict(self.accuracy_votes),
            "accuracy": self.accuracy,
        }


def _majority(votes: Sequence[bool]) -> bool:
    # Strict majority; a tie is treated as a miss.
    return sum(votes) * 2 > len(votes)


def judge_answer(
    item: NoisyContextItem,
    answer: str,
    arm: str,
    judges: Sequence[BackendProfile],
) -> AnswerEval:
    """Grade one answer with every judge. The with-context arm gets the three
    quality scales plus accuracy; the without-context arm only accuracy."""
    if not judges:
        raise ValueError("need at least one judge")
    scores: dict[str, dict[str, int | None]] = {}
    if arm == ARM_WITH_CONTEXT:
        prompts = {
            "faithfulness": fill(
                FAITHFULNESS_PROMPT,
                passages=_passage_block(item.passage_texts),
                question=item.question,
                answer=answer,
            ),
            "answer_relevance": fill(
                ANSWER_RELEVANCE_PROMPT, question=item.question, answer=answer
            ),
        }
        if len(item.passage_ids) > 1:
            # With no distractors there is no noise to be robust to.
            prompts["noise_robustness"] = fill(
                NOISE_ROBUSTNESS_PROMPT,
                doc=item.gold_text,
                question=item.question,
                answer=answer,
            )
        for metric, prompt in prompts.items():
            scores[metric] = {
                j.backend_id: _ask(j, prompt, parse_scale_1_5, RETRY_SUFFIX_NUMBER)
                for j in judges
            }
    accuracy_prompt = fill(
        ACCURACY_PROMPT,
        question=item.question,
        reference=item.gold_answer,
        answer=answer,
    )
    accuracy_votes = {
        j.backend_id: _ask(j, accuracy_prompt, parse_yes_no, RETRY_SUFFIX_YES_NO)
        for j in judges
    }
    ensemble: dict[str, float | None] = {}
    for metric, per_judge in scores.items():
        values = [v for v in per_judge.values() if v is not None]
        ensemble[metric] = sum(values) / len(values) if values else None
    votes = [v for v in accuracy_votes.values() if v is not None]
    accuracy = _majority(votes) if votes else None
    return AnswerEval(
        query_id=item.query_id,
        arm=arm,
        answer=answer,
        scores=scores,
        ensemble=ensemble,
        accuracy_votes=accuracy_votes,
        accuracy=accuracy,
    )


@dataclass
class AnswerEvalSummary:
    n_items: int
    # metric -> (mean, population sd) over items with a defined ensemble score
    quality: dict[str, tuple[float, float] | None]
    excluded: dict[str, int]
    accuracy_with: tuple[int, int]
    accuracy_without: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "quality": {
                m: list(v) if v is not None else None for m, v in self.quality.items()
            },
            "excluded": self.excluded,
            "accuracy_with": list(self.accuracy_with),
            "accuracy_without": list(self.accuracy_without),
        }


def summarize_answer_evals(evals: Sequence[AnswerEval]) -> AnswerEvalSummary:
    with_ctx = [e for e in evals if e.arm == ARM_WITH_CONTEXT]
    without_ctx = [e for e in evals if e.arm == ARM_WITHOUT_CONTEXT]
    quality: dict[str, tuple[float, float] | None] = {}
    excluded: dict[str, int] = {}
    for metric in QUALITY_METRICS:
        values = [
            e.ensemble[metric]
            for e in with_ctx
            if e.ensemble.get(metric) is not None
        ]
        excluded[metric] = len(with_ctx) - len(values)
        if values:
            quality[metric] = (
                sum(values) / len(values),
                statistics.pstdev(values),
            )
        else:
            quality[metric] = None

    def hits(group: Sequence[AnswerEval]) -> tuple[int, int]:
        judged = [e for e in group if e.accuracy is not None]
        return (sum(1 for e in judged if e.accuracy), len(judged))

    return AnswerEvalSummary(
        n_items=len(with_ctx),
        quality=quality,
        excluded=excluded,
        accuracy_with=hits(with_ctx),
        accuracy_without=hits(without_ctx),
    )


ANSWER_TABLE_COLUMNS = (
    "Answer faithfulness",
    "Answer relevance",
    "Noise robustness",
    "Answer accuracy",
    "Answer accuracy w/o Context",
)


def render_answer_table(summary: AnswerEvalSummary, label: str = "QA") -> str:
    """One row per dataset: three quality means with sd, two accuracy ratios."""
    cells = []
    for metric in QUALITY_METRICS:
        entry = summary.quality[metric]
        if entry is None:
            cells.append("n/a")
        else:
            mean, sd = entry
            cells.append(f"{mean:.2f} ±{sd:.2f}")
    w_hit, w_n = summary.accuracy_with
    o_hit, o_n = summary.accuracy_without
    cells.append(f"{w_hit}/{w_n}")
    cells.append(f"{o_hit}/{o_n}")
    width = max(len(label), 4)
    widths = [max(len(c), len(h)) for c, h in zip(cells, ANSWER_TABLE_COLUMNS)]
    header = " " * width + "  " + "  ".join(
        h.ljust(w) for h, w in zip(ANSWER_TABLE_COLUMNS, widths)
    )
    row = label.ljust(width) + "  " + "  ".join(
        c.ljust(w) for c, w in zip(cells, widths)
    )
    return header.rstrip() + "\n" + row.rstrip() + "\n"
