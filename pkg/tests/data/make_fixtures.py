"""Regenerates the frozen acceptance fixtures in this directory.

    python3 tests/data/make_fixtures.py

Everything authored lives in the tables below: the five retrieval queries,
the six QA items, the injected reranker scores, the relevance digit cycle,
and the per-item judge score matrix. The golden ground-truth files are
derived from those scores through the brute-force oracle path (bm25_brute +
an inline sigmoid), NOT through the package's rerank module, so they stay an
independent check. Prompt hashes for the judge fixtures are computed with
the package's own prompt builders, which is fine: the audited quantities are
the frozen digits, not the prompt strings.

Rerun only when the fixture design changes, then re-verify the hand-computed
expectations in test_acceptance.py.
"""

import hashlib
import json
import math
import sys
import tempfile
from pathlib import Path

DATA_DIR = Path(__file__).parent
sys.path.insert(0, str(DATA_DIR.parent))  # for oracles

from oracles import bm25_brute, rank_brute

from ragmeter import backend, corpus, judge

EXPERIMENT = "acc"
BUDGETS = (512, 2000)
SEED = 13
N_DISTRACTORS = 4
CANDIDATE_K = 100
THRESHOLD = 0.5
K1, B = 1.2, 0.75
DEFAULT_RAW = -6.0
SEQ_DECAY = 1.5
GENERATOR_MODEL = "acc-gen"
NEEDLE_LEN = 60

QUERIES = [
    {"query_id": "q1", "text": "how does a fresnel lens concentrate a lighthouse beam",
     "gold_passage_id": "lighthouse-optics:0000"},
    {"query_id": "q2", "text": "how does a swarm of bees choose a new nest site",
     "gold_passage_id": "beekeeping:0000"},
    {"query_id": "q3", "text": "what causes the ground to subside above a pumped aquifer"},
    {"query_id": "q4", "text": "how does a track circuit detect a train inside a block",
     "gold_passage_id": "rail-signalling:0000"},
    {"query_id": "q5", "text": "why does oxidation turn tea leaves black"},
]

# query_id -> doc_id -> raw reranker score for the doc's first chunk;
# chunk seq n scores base - n * SEQ_DECAY, every other pair DEFAULT_RAW.
RAW_SCORES = {
    "q1": {"lighthouse-optics": 2.5, "celestial-navigation": 0.2,
           "violin-acoustics": -1.0},
    "q2": {"beekeeping": 3.0, "tea-processing": -0.5, "aquifers": 0.1},
    "q3": {"aquifers": 2.8, "rail-signalling": -0.7},
    "q4": {"rail-signalling": 2.2, "movable-type": 0.4, "lighthouse-optics": -1.2},
    "q5": {"tea-processing": 2.6, "beekeeping": 0.3, "movable-type": -2.0},
}

# (question, gold doc, gold answer); the gold passage text is filled in from
# the 2000-budget chunking of that doc.
QA_ITEMS = [
    ("a1", "What did Fresnel cut away from a conventional lens?", "lighthouse-optics",
     "The thick glass behind each curved surface, leaving thin concentric prism rings."),
    ("a2", "How does a honey bee swarm settle on one cavity?", "beekeeping",
     "Scouts dance for candidate sites and the swarm decides by quorum."),
    ("a3", "Why does a violin need a soundpost?", "violin-acoustics",
     "The soundpost couples the top and back plates and turns the bridge's rocking into the body's pumping motion."),
    ("a4", "Why did finding longitude at sea have to wait for the chronometer?", "celestial-navigation",
     "East-west position requires accurate time, since a four second clock error shifts the fix by a mile."),
    ("a5", "Why is antimony added to type metal?", "movable-type",
     "Antimony expands slightly on solidifying, pressing the metal into every line of the matrix."),
    ("a6", "What is the kill-green step in tea making?", "tea-processing",
     "Heating the leaf to denature the oxidase enzymes so the tea stays green."),
]

# Fixed relevance-label distribution, cycled over 512-budget chunks in
# (doc, seq) order. A 2000-budget passage inherits the digit of the first
# rule that matches it, which is its doc's seq-0 chunk.
DIGIT_CYCLE = [2, 3, 1, 0, 3, 2, 1, 2, 0, 3, 2, 1, 3, 2, 0, 1]

# Per-item judge digits, items in QA_ITEMS order. Hand-chosen so the
# ensembles come out to round numbers; test_acceptance.py asserts the
# resulting summary verbatim.
MATRIX = {
    "faithfulness": {"one": [5, 4, 5, 4, 5, 4], "two": [5, 4, 5, 4, 5, 4]},
    "answer_relevance": {"one": [4] * 6, "two": [4] * 6},
    "noise_robustness": {"one": [5, 4, 4, 3, 4, 4], "two": [5, 4, 4, 3, 4, 4]},
    "accuracy_with": {"one": list("yyynyy"), "two": list("yynnyy")},
    "accuracy_without": {"one": list("nynnny"), "two": list("nynnyy")},
}

RELEVANCE_MARKER = "single number between 0 and 3"


def ingest_all() -> dict[int, list]:
    passages = {}
    with tempfile.TemporaryDirectory() as tmp:
        docs = corpus.load_documents(DATA_DIR / "corpus")
        for budget in BUDGETS:
            corpus_id = f"{EXPERIMENT}-{budget}"
            corpus.ingest(docs, chunk_budget=budget, corpus_id=corpus_id,
                          root=Path(tmp))
            passages[budget] = corpus.load_passages(corpus_id, root=Path(tmp))
    return passages


def raw_score(query_id: str, passage) -> float:
    base = RAW_SCORES[query_id].get(passage.doc_id)
    if base is None:
        return DEFAULT_RAW
    return base - SEQ_DECAY * passage.seq


def write_rerank_fixture(passages):
    pairs = {}
    for q in QUERIES:
        by_text = {}
        for budget in BUDGETS:
            for p in passages[budget]:
                score = raw_score(q["query_id"], p)
                if score != DEFAULT_RAW:
                    by_text[p.text] = score
        pairs[q["text"]] = by_text
    payload = {"rerank": {"pairs": pairs, "default": DEFAULT_RAW}}
    (DATA_DIR / "rerank_scores.json").write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def write_goldens(passages):
    golden_dir = DATA_DIR / "golden"
    golden_dir.mkdir(exist_ok=True)
    for budget in BUDGETS:
        texts = {p.passage_id: p.text for p in passages[budget]}
        lines = []
        for q in QUERIES:
            scores = bm25_brute(texts, q["text"], K1, B)
            pool = rank_brute(scores, CANDIDATE_K)
            judgments = []
            if pool:
                probs = {
                    pid: 1.0 / (1.0 + math.exp(-raw_score(q["query_id"],
                                                          by_id(passages[budget], pid))))
                    for pid in pool
                }
                ranked = sorted(pool, key=lambda pid: (-probs[pid], pid))
                judgments.append(json.dumps(
                    {
                        "query_id": q["query_id"],
                        "backend_id": "rr-fix",
                        "ranked": ranked,
                        "relevant_set": sorted(
                            pid for pid in pool if probs[pid] >= THRESHOLD
                        ),
                        "gains": {pid: probs[pid] for pid in sorted(probs)},
                    },
                    ensure_ascii=False, sort_keys=True,
                ))
            lines.append(json.dumps(
                {"query_id": q["query_id"], "pool": pool, "judgments": judgments},
                ensure_ascii=False, sort_keys=True,
            ))
        path = golden_dir / f"ground_truth-{EXPERIMENT}-{budget}.jsonl"
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def by_id(passages, pid):
    for p in passages:
        if p.passage_id == pid:
            return p
    raise KeyError(pid)


def build_relevance_rules(passages):
    """One contains-rule per 512 chunk, keyed on its 60-char tail. The tail
    of a non-final chunk falls mid-document, so it is unique to that chunk
    among 512 passages while still matching the doc's 2000 passage."""
    everything = [p for budget in BUDGETS for p in passages[budget]]
    rules = []
    chunks = sorted(passages[512], key=lambda p: p.passage_id)
    for i, chunk in enumerate(chunks):
        needle = chunk.text[-NEEDLE_LEN:]
        owners = {
            (p.chunk_budget, p.passage_id) for p in everything if needle in p.text
        }
        expected = {(512, chunk.passage_id), (2000, f"{chunk.doc_id}:0000")}
        if owners != expected:
            raise AssertionError(
                f"needle for {chunk.passage_id} not unique: {sorted(owners)}"
            )
        rules.append({
            "contains": [RELEVANCE_MARKER, needle],
            "text": str(DIGIT_CYCLE[i % len(DIGIT_CYCLE)]),
        })

    digits = {}
    for budget in BUDGETS:
        for p in passages[budget]:
            for rule in rules:
                if all(n in p.text for n in rule["contains"][1:]):
                    digits[f"{budget}:{p.passage_id}"] = int(rule["text"])
                    break
            else:
                raise AssertionError(f"no rule matches {p.passage_id}")
    (DATA_DIR / "relevance_digits.json").write_text(
        json.dumps(digits, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return rules


def write_qa_and_judges(passages, relevance_rules):
    coarse = passages[max(BUDGETS)]
    text_of = {p.doc_id: p.text for p in coarse if p.seq == 0}

    qa_rows = []
    for query_id, question, doc, answer in QA_ITEMS:
        qa_rows.append({
            "query_id": query_id,
            "question": question,
            "gold_passage": text_of[doc],
            "gold_answer": answer,
        })
    (DATA_DIR / "qa.jsonl").write_text(
        "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n"
                for r in qa_rows),
        encoding="utf-8",
    )

    generator = backend.BackendProfile(
        backend_id="gen", kind="generate", base_url="stub:",
        model_name=GENERATOR_MODEL,
    )
    by_hash = {"one": {}, "two": {}}

    def put(prompt, digit_one, digit_two):
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        by_hash["one"][digest] = str(digit_one)
        by_hash["two"][digest] = str(digit_two)

    yes_no = {"y": "yes", "n": "no"}
    for i, (query_id, question, doc, answer_text) in enumerate(QA_ITEMS):
        gold = by_id(coarse, f"{doc}:0000")
        query = corpus.Query(query_id=query_id, text=question,
                             gold_passage_id=gold.passage_id,
                             gold_answer=answer_text)
        ctx = judge.build_noisy_context(query, gold, coarse,
                                        n_distractors=N_DISTRACTORS, seed=SEED)
        answer_with = backend.generate(
            generator, judge.answer_prompt(ctx, judge.ARM_WITH_CONTEXT))
        answer_without = backend.generate(
            generator, judge.answer_prompt(ctx, judge.ARM_WITHOUT_CONTEXT))

        block = judge._passage_block(ctx.passage_texts)
        put(judge.fill(judge.FAITHFULNESS_PROMPT, passages=block,
                       question=question, answer=answer_with),
            MATRIX["faithfulness"]["one"][i], MATRIX["faithfulness"]["two"][i])
        put(judge.fill(judge.ANSWER_RELEVANCE_PROMPT, question=question,
                       answer=answer_with),
            MATRIX["answer_relevance"]["one"][i],
            MATRIX["answer_relevance"]["two"][i])
        put(judge.fill(judge.NOISE_ROBUSTNESS_PROMPT, doc=ctx.gold_text,
                       question=question, answer=answer_with),
            MATRIX["noise_robustness"]["one"][i],
            MATRIX["noise_robustness"]["two"][i])
        put(judge.fill(judge.ACCURACY_PROMPT, question=question,
                       reference=answer_text, answer=answer_with),
            yes_no[MATRIX["accuracy_with"]["one"][i]],
            yes_no[MATRIX["accuracy_with"]["two"][i]])
        put(judge.fill(judge.ACCURACY_PROMPT, question=question,
                       reference=answer_text, answer=answer_without),
            yes_no[MATRIX["accuracy_without"]["one"][i]],
            yes_no[MATRIX["accuracy_without"]["two"][i]])

    for name, rules in (("one", relevance_rules), ("two", [])):
        payload = {"generate": {
            "by_hash": dict(sorted(by_hash[name].items())),
            "responses": rules,
            "default": "",
        }}
        (DATA_DIR / f"judge_{name}.json").write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )


def main():
    passages = ingest_all()
    (DATA_DIR / "queries.jsonl").write_text(
        "".join(json.dumps(q, ensure_ascii=False, sort_keys=True) + "\n"
                for q in QUERIES),
        encoding="utf-8",
    )
    write_rerank_fixture(passages)
    write_goldens(passages)
    rules = build_relevance_rules(passages)
    write_qa_and_judges(passages, rules)
    for budget in BUDGETS:
        print(f"budget {budget}: {len(passages[budget])} passages")
    print("fixtures written to", DATA_DIR)


if __name__ == "__main__":
    main()
