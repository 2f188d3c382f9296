"""Experiment orchestration: config, run identity, stages, artifacts.

A run is identified by a content hash of the config plus the package version,
so editing the config can never silently reuse stale artifacts. Every file a
run emits lives under runs/<run_id>/ and is reachable from the run's
run.json; timestamps appear only there, which keeps every other artifact
byte-comparable across reruns.

Stages run sequentially and append to the RunRecord as they finish. Each
stage keeps the same counter vocabulary so that
items_in = scored + skipped + unevaluable + unparseable always holds.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from . import backend as backend_client
from . import corpus as corpus_mod
from . import dense, judge, lexical, metrics, mining, rerank, tokenizer
from .backend import BackendProfile
from .corpus import Passage, Query
from .errors import ConfigError, StageError

logger = logging.getLogger(__name__)

BM25_SYSTEM = "bm25"

STAGE_INGEST = "ingest"
STAGE_INDEX = "index"
STAGE_EMBED = "embed"
STAGE_MINE = "mine"
STAGE_GROUND_TRUTH = "ground_truth"
STAGE_RETRIEVAL_EVAL = "retrieval_eval"
STAGE_RELEVANCE = "relevance_judging"
STAGE_ANSWERS = "answer_eval"
STAGE_CLASSIFIER = "classifier_eval"

_CONFIG_FIELDS = {
    "experiment",
    "corpus_path",
    "queries_path",
    "qa_path",
    "classifier_datasets",
    "chunk_budgets",
    "retrievers",
    "rerankers",
    "judges",
    "generator",
    "judged_retriever",
    "judged_reranker",
    "retrieval_depth",
    "candidate_k",
    "metric_k_grid",
    "frequency_k_grid",
    "relevance_threshold",
    "gain_mode",
    "bm25_k1",
    "bm25_b",
    "n_distractors",
    "n_random_negatives",
    "n_indoc_negatives",
    "mining_pool_size",
    "seed",
    "workdir",
    "backends",
}

_BACKEND_FIELDS = {
    "kind",
    "base_url",
    "model_name",
    "normalized",
    "query_prefix",
    "passage_prefix",
    "timeout",
    "max_retries",
    "max_in_flight",
    "auth_token_env",
}


@dataclass
class ExperimentConfig:
    experiment: str = "experiment"
    corpus_path: str | None = None
    queries_path: str | None = None
    qa_path: str | None = None
    # subset name -> path of a labeled context-relevance dataset
    classifier_datasets: dict[str, str] = field(default_factory=dict)
    chunk_budgets: tuple[int, ...] = (512, 2000)
    retrievers: tuple[str, ...] = (BM25_SYSTEM,)
    rerankers: tuple[str, ...] = ()
    judges: tuple[str, ...] = ()
    generator: str | None = None
    judged_retriever: str | None = None
    judged_reranker: str | None = None
    retrieval_depth: int = 50
    # one pool depth, or one per chunk budget
    candidate_k: int | dict[int, int] = 100
    metric_k_grid: tuple[int, ...] = (1, 3, 5, 10, 20, 50)
    frequency_k_grid: tuple[int, ...] = (3, 5, 7, 10)
    relevance_threshold: float = 0.5
    gain_mode: str = metrics.GAIN_GRADED
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    n_distractors: int = 4
    n_random_negatives: int = 1
    n_indoc_negatives: int = 1
    mining_pool_size: int = 256
    seed: int = 0
    workdir: str = "ragmeter-data"
    backends: dict[str, BackendProfile] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.chunk_budgets = tuple(self.chunk_budgets)
        self.retrievers = tuple(self.retrievers)
        self.rerankers = tuple(self.rerankers)
        self.judges = tuple(self.judges)
        self.metric_k_grid = tuple(self.metric_k_grid)
        self.frequency_k_grid = tuple(self.frequency_k_grid)
        if not self.chunk_budgets:
            raise ConfigError("chunk_budgets is empty")
        if len(set(self.chunk_budgets)) != len(self.chunk_budgets):
            raise ConfigError("chunk_budgets has duplicates")
        if not self.retrievers:
            raise ConfigError("retrievers is empty")
        if self.gain_mode not in (metrics.GAIN_BINARY, metrics.GAIN_GRADED):
            raise ConfigError(f"unknown gain_mode {self.gain_mode!r}")
        if not 0.0 < self.relevance_threshold < 1.0:
            raise ConfigError(
                f"relevance_threshold must be in (0, 1), got {self.relevance_threshold}"
            )
        if BM25_SYSTEM in self.backends:
            raise ConfigError(f"backend id {BM25_SYSTEM!r} is reserved")
        for name, kind in self._required_backends():
            profile = self.backends.get(name)
            if profile is None:
                raise ConfigError(f"backend {name!r} is referenced but not defined")
            if profile.kind != kind:
                raise ConfigError(
                    f"backend {name!r} must have kind {kind!r}, has {profile.kind!r}"
                )
        if self.judged_retriever is None and self.retrievers:
            self.judged_retriever = self.retrievers[0]
        if self.judged_reranker is None and self.rerankers:
            self.judged_reranker = self.rerankers[0]

    def _required_backends(self):
        for name in self.retrievers:
            if name != BM25_SYSTEM:
                yield name, "embed"
        for name in self.rerankers:
            yield name, "rerank"
        for name in self.judges:
            yield name, "generate"
        if self.generator is not None:
            yield self.generator, "generate"

    def candidate_k_for(self, budget: int) -> int:
        if isinstance(self.candidate_k, dict):
            try:
                return self.candidate_k[budget]
            except KeyError:
                raise ConfigError(f"candidate_k has no entry for budget {budget}")
        return self.candidate_k

    def corpus_id(self, budget: int) -> str:
        return f"{self.experiment}-{budget}"

    def profile(self, backend_id: str) -> BackendProfile:
        try:
            return self.backends[backend_id]
        except KeyError:
            raise ConfigError(f"unknown backend {backend_id!r}")

    def snapshot(self) -> dict:
        """Full config as plain JSON-compatible data, used for hashing and
        for embedding in the RunRecord."""
        out: dict = {}
        for name in sorted(_CONFIG_FIELDS):
            value = getattr(self, name)
            if name == "backends":
                value = {
                    bid: _profile_to_dict(profile)
                    for bid, profile in sorted(value.items())
                }
            elif name == "candidate_k" and isinstance(value, dict):
                value = {str(k): v for k, v in sorted(value.items())}
            elif isinstance(value, tuple):
                value = list(value)
            out[name] = value
        return out


def _profile_to_dict(profile: BackendProfile) -> dict:
    return {
        "kind": profile.kind,
        "base_url": profile.base_url,
        "model_name": profile.model_name,
        "normalized": profile.normalized,
        "query_prefix": profile.query_prefix,
        "passage_prefix": profile.passage_prefix,
        "timeout": profile.timeout,
        "max_retries": profile.max_retries,
        "max_in_flight": profile.max_in_flight,
        "auth_token_env": profile.auth_token_env,
    }


def _profile_from_dict(backend_id: str, raw: dict) -> BackendProfile:
    unknown = set(raw) - _BACKEND_FIELDS
    if unknown:
        raise ConfigError(
            f"backend {backend_id!r}: unknown fields {sorted(unknown)}"
        )
    missing = {"kind", "base_url", "model_name"} - set(raw)
    if missing:
        raise ConfigError(
            f"backend {backend_id!r}: missing fields {sorted(missing)}"
        )
    try:
        return BackendProfile(backend_id=backend_id, **raw)
    except ValueError as exc:
        raise ConfigError(f"backend {backend_id!r}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    kwargs = dict(raw)
    backends_raw = kwargs.pop("backends", {})
    if not isinstance(backends_raw, dict):
        raise ConfigError("backends must be an object keyed by backend id")
    kwargs["backends"] = {
        bid: _profile_from_dict(bid, entry) for bid, entry in backends_raw.items()
    }
    if "candidate_k" in kwargs and isinstance(kwargs["candidate_k"], dict):
        kwargs["candidate_k"] = {
            int(k): int(v) for k, v in kwargs["candidate_k"].items()
        }
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(raw)


def compute_run_id(config: ExperimentConfig) -> str:
    snapshot = config.snapshot()
    # Where a run is stored must not change what the run is.
    snapshot.pop("workdir")
    payload = json.dumps(snapshot, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(f"{payload}\n{__version__}".encode("utf-8")).hexdigest()
    return digest[:12]


# --- run record -------------------------------------------------------------


def _utcnow() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class StageRecord:
    status: str = "pending"
    artifacts: list[str] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "artifacts": self.artifacts,
            "counters": self.counters,
        }


@dataclass
class RunRecord:
    run_id: str
    version: str
    created_at: str
    config: dict
    stages: dict[str, StageRecord] = field(default_factory=dict)
    finished_at: str | None = None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "version": self.version,
            "created_at": self.created_at,
            "finished_at": self.finished_at,
            "config": self.config,
            "stages": {name: s.to_dict() for name, s in sorted(self.stages.items())},
        }


def make_counters(
    items_in: int, scored: int, skipped: int = 0, unevaluable: int = 0,
    unparseable: int = 0,
) -> dict[str, int]:
    counters = {
        "items_in": items_in,
        "scored": scored,
        "skipped": skipped,
        "unevaluable": unevaluable,
        "unparseable": unparseable,
    }
    if items_in != scored + skipped + unevaluable + unparseable:
        raise ValueError(f"counter conservation violated: {counters}")
    return counters


# --- data loading -----------------------------------------------------------


def load_queries(path: str | Path) -> list[Query]:
    queries: list[Query] = []
    seen: set[str] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        query_id = raw["query_id"]
        if query_id in seen:
            raise ConfigError(f"duplicate query_id {query_id!r} in {path}")
        seen.add(query_id)
        queries.append(
            Query(
                query_id=query_id,
                text=raw.get("text") or raw["question"],
                gold_passage_id=raw.get("gold_passage_id"),
                gold_answer=raw.get("gold_answer"),
            )
        )
    if not queries:
        raise ConfigError(f"no queries in {path}")
    return queries


@dataclass(frozen=True)
class QaItem:
    query_id: str
    question: str
    gold_passage: str
    gold_answer: str


def load_qa_items(path: str | Path) -> list[QaItem]:
    items: list[QaItem] = []
    seen: set[str] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        if raw["query_id"] in seen:
            raise ConfigError(f"duplicate query_id {raw['query_id']!r} in {path}")
        seen.add(raw["query_id"])
        items.append(
            QaItem(
                query_id=raw["query_id"],
                question=raw["question"],
                gold_passage=raw["gold_passage"],
                gold_answer=raw["gold_answer"],
            )
        )
    if not items:
        raise ConfigError(f"no QA items in {path}")
    return items


# --- the runner -------------------------------------------------------------


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _jsonl(records) -> str:
    return "".join(
        json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records
    )


class Runner:
    """Executes stages for one run and maintains its RunRecord."""

    def __init__(
        self,
        config: ExperimentConfig,
        run_id: str | None = None,
        seed: int | None = None,
    ):
        if seed is not None:
            config = replace(config, seed=seed)
        self.config = config
        self.run_id = run_id or compute_run_id(config)
        self.root = Path(config.workdir) / "runs" / self.run_id
        self.record = self._load_or_create_record()

    # -- record plumbing --

    @property
    def record_path(self) -> Path:
        return self.root / "run.json"

    def _load_or_create_record(self) -> RunRecord:
        if self.record_path.exists():
            raw = json.loads(self.record_path.read_text(encoding="utf-8"))
            record = RunRecord(
                run_id=raw["run_id"],
                version=raw["version"],
                created_at=raw["created_at"],
                config=raw["config"],
                finished_at=raw.get("finished_at"),
            )
            for name, s in raw.get("stages", {}).items():
                record.stages[name] = StageRecord(
                    status=s["status"],
                    artifacts=list(s["artifacts"]),
                    counters=dict(s["counters"]),
                )
            return record
        return RunRecord(
            run_id=self.run_id,
            version=__version__,
            created_at=_utcnow(),
            config=self.config.snapshot(),
        )

    def save_record(self) -> None:
        _write(
            self.record_path,
            json.dumps(self.record.to_dict(), ensure_ascii=False, indent=2,
                       sort_keys=True) + "\n",
        )

    def finalize(self) -> None:
        self.record.finished_at = _utcnow()
        self.save_record()

    def _run_stage(self, name: str, body):
        stage = StageRecord(status="running")
        self.record.stages[name] = stage
        try:
            result = body(stage)
        except Exception as exc:
            stage.status = f"failed: {exc}"
            self.save_record()
            if isinstance(exc, StageError):
                raise
            raise StageError(f"stage {name} failed: {exc}") from exc
        stage.status = "ok"
        self.save_record()
        return result

    def _artifact(self, stage: StageRecord, path: Path, text: str) -> None:
        _write(path, text)
        stage.artifacts.append(str(path.relative_to(self.root)))

    # -- paths --

    @property
    def corpora_root(self) -> Path:
        return self.root / "corpora"

    def _require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise StageError(f"missing artifact {path} ({hint})")
        return path

    # -- stage: ingest --

    def run_ingest(self):
        config = self.config

        def body(stage: StageRecord):
            if config.corpus_path is None:
                docs_path = corpus_mod.sample_corpus_dir()
            else:
                docs_path = Path(config.corpus_path)
            documents = corpus_mod.load_documents(docs_path)
            manifests = []
            kept = 0
            for budget in config.chunk_budgets:
                manifest = corpus_mod.ingest(
                    documents,
                    chunk_budget=budget,
                    corpus_id=config.corpus_id(budget),
                    root=self.corpora_root,
                )
                manifests.append(manifest)
                kept = manifest.doc_count
                for name in (corpus_mod.MANIFEST_NAME, corpus_mod.PASSAGES_NAME):
                    stage.artifacts.append(
                        str(
                            (self.corpora_root / manifest.corpus_id / name)
                            .relative_to(self.root)
                        )
                    )
            stage.counters = make_counters(
                items_in=len(documents), scored=kept,
                skipped=len(documents) - kept,
            )
            return manifests

        return self._run_stage(STAGE_INGEST, body)

    # -- stage: index --

    def run_index(self):
        config = self.config

        def body(stage: StageRecord):
            indexes = {}
            for budget in config.chunk_budgets:
                corpus_id = config.corpus_id(budget)
                self._require(
                    self.corpora_root / corpus_id / corpus_mod.PASSAGES_NAME,
                    "run ingest first",
                )
                index = lexical.build_index(
                    corpus_id, k1=config.bm25_k1, b=config.bm25_b,
                    root=self.corpora_root,
                )
                indexes[budget] = index
                stage.artifacts.append(
                    str(
                        (self.corpora_root / corpus_id / lexical.INDEX_NAME)
                        .relative_to(self.root)
                    )
                )
            n = sum(index.N for index in indexes.values())
            stage.counters = make_counters(items_in=n, scored=n)
            return indexes

        return self._run_stage(STAGE_INDEX, body)

    # -- stage: embed --

    def run_embed(self):
        config = self.config
        dense_retrievers = [r for r in config.retrievers if r != BM25_SYSTEM]

        def body(stage: StageRecord):
            total = 0
            for budget in config.chunk_budgets:
                corpus_id = config.corpus_id(budget)
                self._require(
                    self.corpora_root / corpus_id / corpus_mod.PASSAGES_NAME,
                    "run ingest first",
                )
                for backend_id in dense_retrievers:
                    store = dense.embed_corpus(
                        corpus_id, config.profile(backend_id),
                        root=self.corpora_root,
                    )
                    total += len(store)
                    stage.artifacts.append(
                        str(
                            (self.corpora_root / corpus_id /
                             dense.store_filename(backend_id))
                            .relative_to(self.root)
                        )
                    )
            stage.counters = make_counters(items_in=total, scored=total)

        return self._run_stage(STAGE_EMBED, body)

    # -- stage: ground truth --

    def run_ground_truth(self):
        config = self.config
        if not config.rerankers:
            raise ConfigError("ground truth needs at least one reranker")
        if config.queries_path is None:
            raise ConfigError("ground truth needs queries_path")

        def body(stage: StageRecord):
            queries = load_queries(config.queries_path)
            rerankers = [config.profile(r) for r in config.rerankers]
            unevaluable = 0
            for budget in config.chunk_budgets:
                corpus_id = config.corpus_id(budget)
                index = lexical.load_index(corpus_id, root=self.corpora_root)
                passages = corpus_mod.load_passages(corpus_id, root=self.corpora_root)
                by_id = {p.passage_id: p for p in passages}
                lines = []
                for query in queries:
                    gt = rerank.build_ground_truth(
                        query, index, rerankers, by_id,
                        candidate_k=config.candidate_k_for(budget),
                        threshold=config.relevance_threshold,
                    )
                    if gt.unevaluable:
                        unevaluable += 1
                    lines.append(
                        {
                            "query_id": gt.query_id,
                            "pool": list(gt.pool),
                            "judgments": [
                                rerank.judgment_to_json(j) for j in gt.judgments
                            ],
                        }
                    )
                self._artifact(
                    stage,
                    self.root / "ground_truth" / f"{corpus_id}.jsonl",
                    _jsonl(lines),
                )
            n = len(queries) * len(config.chunk_budgets)
            stage.counters = make_counters(
                items_in=n, scored=n - unevaluable, unevaluable=unevaluable,
            )

        return self._run_stage(STAGE_GROUND_TRUTH, body)

    def _load_ground_truth(self, corpus_id: str) -> dict[str, rerank.GroundTruth]:
        path = self._require(
            self.root / "ground_truth" / f"{corpus_id}.jsonl",
            "run ground-truth first",
        )
        out: dict[str, rerank.GroundTruth] = {}
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            raw = json.loads(line)
            out[raw["query_id"]] = rerank.GroundTruth(
                query_id=raw["query_id"],
                pool=tuple(raw["pool"]),
                judgments=tuple(
                    rerank.judgment_from_json(j) for j in raw["judgments"]
                ),
            )
        return out

    # -- stage: retrieval eval --

    def _rank(
        self, retriever: str, budget: int, queries: list[Query], depth: int
    ) -> dict[str, list[str]]:
        corpus_id = self.config.corpus_id(budget)
        rankings: dict[str, list[str]] = {}
        if retriever == BM25_SYSTEM:
            index = lexical.load_index(corpus_id, root=self.corpora_root)
            for query in queries:
                hits = lexical.bm25_search(index, query.text, depth)
                rankings[query.query_id] = [h.passage_id for h in hits]
        else:
            profile = self.config.profile(retriever)
            store = dense.load_store(corpus_id, retriever, root=self.corpora_root)
            for query in queries:
                hits = dense.dense_search(store, query.text, profile, depth)
                rankings[query.query_id] = [h.passage_id for h in hits]
        return rankings

    def run_retrieval_eval(self):
        config = self.config
        if config.queries_path is None:
            raise ConfigError("retrieval eval needs queries_path")

        def body(stage: StageRecord):
            queries = load_queries(config.queries_path)
            reports: dict[tuple[int, str], metrics.AggregateReport] = {}
            n_evals = 0
            n_unevaluable = 0
            for budget in config.chunk_budgets:
                corpus_id = config.corpus_id(budget)
                truths = self._load_ground_truth(corpus_id)
                out_dir = self.root / "retrieval" / corpus_id
                report_texts = []
                for retriever in config.retrievers:
                    rankings = self._rank(
                        retriever, budget, queries, config.retrieval_depth
                    )
                    self._artifact(
                        stage,
                        out_dir / f"rankings-{retriever}.jsonl",
                        _jsonl(
                            {"query_id": q.query_id,
                             "ranked": rankings[q.query_id]}
                            for q in queries
                        ),
                    )
                    evals: list[metrics.RetrievalEval] = []
                    for query in queries:
                        gt = truths[query.query_id]
                        judgments = gt.judgments or tuple(
                            rerank.Judgment(
                                query_id=query.query_id, backend_id=r,
                                ranked=(), relevant_set=frozenset(), gains={},
                            )
                            for r in config.rerankers
                        )
                        for judgment in judgments:
                            evals.append(
                                metrics.evaluate_query(
                                    query.query_id,
                                    retriever,
                                    rankings[query.query_id],
                                    judgment,
                                    config.metric_k_grid,
                                    config.gain_mode,
                                )
                            )
                    n_evals += len(evals)
                    n_unevaluable += sum(1 for e in evals if not e.evaluable)
                    report = metrics.aggregate_evals(evals)
                    reports[(budget, retriever)] = report
                    self._artifact(
                        stage,
                        out_dir / f"evals-{retriever}.jsonl",
                        metrics.evals_to_jsonl(evals),
                    )
                    self._artifact(
                        stage,
                        out_dir / f"report-{retriever}.json",
                        metrics.report_to_json(report) + "\n",
                    )
                    self._artifact(
                        stage,
                        out_dir / f"report-{retriever}.csv",
                        metrics.render_report_csv(report),
                    )
                    report_texts.append(
                        f"== {retriever} @ {corpus_id} ==\n"
                        + metrics.render_report_table(report)
                    )
                self._artifact(
                    stage, out_dir / "report.txt", "\n".join(report_texts)
                )
            stage.counters = make_counters(
                items_in=n_evals,
                scored=n_evals - n_unevaluable,
                unevaluable=n_unevaluable,
            )
            return reports

        return self._run_stage(STAGE_RETRIEVAL_EVAL, body)

    # -- stage: relevance judging --

    def run_relevance_judging(self):
        config = self.config
        if not config.judges:
            raise ConfigError("relevance judging needs at least one judge")
        if config.queries_path is None:
            raise ConfigError("relevance judging needs queries_path")
        if config.judged_retriever is None or config.judged_reranker is None:
            raise ConfigError(
                "relevance judging needs judged_retriever and judged_reranker"
            )

        def body(stage: StageRecord):
            queries = load_queries(config.queries_path)
            judge_profile = config.profile(config.judges[0])
            depth = max(config.frequency_k_grid)
            all_labels: list[judge.RelevanceLabel] = []
            for budget in config.chunk_budgets:
                corpus_id = config.corpus_id(budget)
                passages = corpus_mod.load_passages(corpus_id, root=self.corpora_root)
                by_id = {p.passage_id: p for p in passages}
                rank_path = self._require(
                    self.root / "retrieval" / corpus_id
                    / f"rankings-{config.judged_retriever}.jsonl",
                    "run eval-retrieval first",
                )
                retriever_rankings = {
                    r["query_id"]: r["ranked"]
                    for r in map(
                        json.loads,
                        rank_path.read_text(encoding="utf-8").splitlines(),
                    )
                }
                truths = self._load_ground_truth(corpus_id)
                reranked_rankings = {}
                for query in queries:
                    gt = truths[query.query_id]
                    chosen = next(
                        (
                            j
                            for j in gt.judgments
                            if j.backend_id == config.judged_reranker
                        ),
                        None,
                    )
                    reranked_rankings[query.query_id] = (
                        list(chosen.ranked) if chosen else []
                    )
                for source, rankings in (
                    (judge.SOURCE_RETRIEVER, retriever_rankings),
                    (judge.SOURCE_RERANKED, reranked_rankings),
                ):
                    all_labels.extend(
                        judge.label_rankings(
                            queries, rankings, by_id, judge_profile,
                            depth, source, budget,
                        )
                    )
            self._artifact(
                stage,
                self.root / "relevance" / "labels.jsonl",
                _jsonl(lb.to_dict() for lb in all_labels),
            )
            rows = judge.frequency_rows(all_labels, config.frequency_k_grid)
            self._artifact(
                stage,
                self.root / "relevance" / "frequency.json",
                json.dumps(
                    [
                        {
                            "chunk_budget": r.chunk_budget,
                            "k": r.k,
                            "source": r.source,
                            "counts": list(r.counts),
                            "percentages": list(r.percentages),
                            "n_scored": r.n_scored,
                            "n_unparseable": r.n_unparseable,
                        }
                        for r in rows
                    ],
                    ensure_ascii=False, indent=2, sort_keys=True,
                ) + "\n",
            )
            self._artifact(
                stage,
                self.root / "relevance" / "frequency.txt",
                judge.render_frequency_table(rows),
            )
            unparseable = sum(1 for lb in all_labels if lb.score is None)
            stage.counters = make_counters(
                items_in=len(all_labels),
                scored=len(all_labels) - unparseable,
                unparseable=unparseable,
            )
            return rows

        return self._run_stage(STAGE_RELEVANCE, body)

    # -- stage: answer eval --

    def _qa_corpus_budget(self) -> int:
        # Distractors come from the coarsest chunking.
        return max(self.config.chunk_budgets)

    def _match_gold_passage(
        self, item: QaItem, passages: list[Passage], budget: int
    ) -> Passage:
        # Whitespace-insensitive: stored passages keep paragraph newlines that
        # a verbatim copy of the text may or may not preserve.
        wanted = " ".join(item.gold_passage.split())
        for passage in passages:
            if " ".join(passage.text.split()) == wanted:
                return passage
        wanted = corpus_mod.normalize_text(item.gold_passage).strip()
        # Gold text absent from the corpus: carry it as its own document so
        # distractor mining still sees it as cross-document.
        return Passage(
            passage_id=f"qa:{item.query_id}",
            doc_id=f"qa:{item.query_id}",
            seq=0,
            text=wanted,
            token_count=tokenizer.count_tokens(wanted),
            chunk_budget=budget,
        )

    def run_answer_eval(self):
        config = self.config
        if config.qa_path is None:
            raise ConfigError("answer eval needs qa_path")
        if config.generator is None:
            raise ConfigError("answer eval needs a generator backend")
        if not config.judges:
            raise ConfigError("answer eval needs at least one judge")

        def body(stage: StageRecord):
            items = load_qa_items(config.qa_path)
            budget = self._qa_corpus_budget()
            corpus_id = config.corpus_id(budget)
            passages = corpus_mod.load_passages(corpus_id, root=self.corpora_root)
            generator = config.profile(config.generator)
            judges = [config.profile(j) for j in config.judges]
            evals: list[judge.AnswerEval] = []
            contexts = []
            skipped = 0
            for item in items:
                gold = self._match_gold_passage(item, passages, budget)
                query = Query(
                    query_id=item.query_id,
                    text=item.question,
                    gold_passage_id=gold.passage_id,
                    gold_answer=item.gold_answer,
                )
                ctx = judge.build_noisy_context(
                    query, gold, passages,
                    n_distractors=config.n_distractors, seed=config.seed,
                )
                contexts.append(
                    {
                        "query_id": ctx.query_id,
                        "gold_passage_id": ctx.gold_passage_id,
                        "passage_ids": list(ctx.passage_ids),
                    }
                )
                try:
                    for arm in (judge.ARM_WITH_CONTEXT, judge.ARM_WITHOUT_CONTEXT):
                        answer = judge.generate_answer(ctx, generator, arm)
                        evals.append(judge.judge_answer(ctx, answer, arm, judges))
                except (backend_client.TransportError,
                        backend_client.ProtocolError) as exc:
                    logger.warning("item %s skipped: %s", item.query_id, exc)
                    evals = [e for e in evals if e.query_id != item.query_id]
                    skipped += 1
            self._artifact(
                stage,
                self.root / "answers" / "contexts.jsonl",
                _jsonl(contexts),
            )
            self._artifact(
                stage,
                self.root / "answers" / "answer_evals.jsonl",
                _jsonl(e.to_dict() for e in evals),
            )
            summary = judge.summarize_answer_evals(evals)
            self._artifact(
                stage,
                self.root / "answers" / "quality.json",
                json.dumps(summary.to_dict(), ensure_ascii=False, indent=2,
                           sort_keys=True) + "\n",
            )
            self._artifact(
                stage,
                self.root / "answers" / "quality.txt",
                judge.render_answer_table(
                    summary, label=f"{config.experiment} QA"
                ),
            )
            unparseable = sum(
                1
                for e in evals
                if e.arm == judge.ARM_WITH_CONTEXT and e.accuracy is None
            )
            stage.counters = make_counters(
                items_in=len(items),
                scored=len(items) - skipped - unparseable,
                skipped=skipped,
                unparseable=unparseable,
            )
            return summary

        return self._run_stage(STAGE_ANSWERS, body)

    # -- stage: mining --

    def _labeled_pairs(
        self, passages: list[Passage], budget: int
    ) -> tuple[list[tuple[Query, Passage]], int]:
        """Positive (query, passage) pairs from whatever carries gold labels:
        queries with a gold_passage_id, and QA items matched by text."""
        config = self.config
        by_id = {p.passage_id: p for p in passages}
        pairs: list[tuple[Query, Passage]] = []
        skipped = 0
        if config.queries_path is not None:
            for query in load_queries(config.queries_path):
                if query.gold_passage_id is None:
                    continue
                gold = by_id.get(query.gold_passage_id)
                if gold is None:
                    logger.warning(
                        "query %s: gold passage %s not in corpus; skipped",
                        query.query_id, query.gold_passage_id,
                    )
                    skipped += 1
                    continue
                pairs.append((query, gold))
        if config.qa_path is not None:
            for item in load_qa_items(config.qa_path):
                gold = self._match_gold_passage(item, passages, budget)
                query = Query(
                    query_id=item.query_id,
                    text=item.question,
                    gold_passage_id=gold.passage_id,
                    gold_answer=item.gold_answer,
                )
                pairs.append((query, gold))
        return pairs, skipped

    def run_mine(self):
        config = self.config
        if config.queries_path is None and config.qa_path is None:
            raise ConfigError("mining needs queries_path or qa_path")
        if not config.rerankers:
            raise ConfigError("mining needs a reranker to score candidates")

        def body(stage: StageRecord):
            budget = self._qa_corpus_budget()
            corpus_id = config.corpus_id(budget)
            passages = corpus_mod.load_passages(corpus_id, root=self.corpora_root)
            pairs, skipped = self._labeled_pairs(passages, budget)
            if not pairs:
                raise StageError("no labeled (query, gold passage) pairs to mine from")
            scorer = config.profile(config.rerankers[0])
            dataset = mining.build_dataset(
                pairs,
                mining.MiningConfig(
                    n_random=config.n_random_negatives,
                    n_indoc=config.n_indoc_negatives,
                    pool_size=config.mining_pool_size,
                    seed=config.seed,
                ),
                passages,
                scorer,
            )
            self._artifact(
                stage,
                self.root / "mining" / "mined.jsonl",
                mining.dataset_to_jsonl(dataset),
            )
            stage.counters = make_counters(
                items_in=len(pairs) + skipped, scored=len(pairs), skipped=skipped,
            )
            return dataset

        return self._run_stage(STAGE_MINE, body)

    # -- stage: classifier eval --

    def run_classifier_eval(self):
        config = self.config
        if not config.rerankers:
            raise ConfigError("classifier eval needs rerankers")

        def body(stage: StageRecord):
            datasets: dict[str, mining.ContextRelevanceDataset] = {}
            if config.classifier_datasets:
                for subset, path in sorted(config.classifier_datasets.items()):
                    datasets[subset] = mining.dataset_from_jsonl(
                        Path(path).read_text(encoding="utf-8")
                    )
            else:
                mined_path = self._require(
                    self.root / "mining" / "mined.jsonl", "run mine first"
                )
                datasets["mined"] = mining.dataset_from_jsonl(
                    mined_path.read_text(encoding="utf-8")
                )
            blocks = []
            report_dicts = []
            total = 0
            for subset, dataset in datasets.items():
                if not dataset.items:
                    raise StageError(f"classifier dataset {subset!r} is empty")
                for backend_id in config.rerankers:
                    profile = config.profile(backend_id)
                    report = rerank.evaluate_reranker_classifier(
                        dataset, profile,
                        threshold=config.relevance_threshold, subset=subset,
                    )
                    total += len(dataset.items)
                    report_dicts.append(report.to_dict())
                    blocks.append(rerank.render_classifier_report(report))
            self._artifact(
                stage,
                self.root / "classifier" / "reports.json",
                json.dumps(report_dicts, ensure_ascii=False, indent=2,
                           sort_keys=True) + "\n",
            )
            self._artifact(
                stage,
                self.root / "classifier" / "reports.txt",
                "\n".join(blocks),
            )
            stage.counters = make_counters(items_in=total, scored=total)
            return report_dicts

        return self._run_stage(STAGE_CLASSIFIER, body)

    # -- report re-rendering --

    def render_reports(self) -> list[str]:
        """Rebuild every human-readable report from persisted artifacts."""
        rendered: list[str] = []
        for budget in self.config.chunk_budgets:
            corpus_id = self.config.corpus_id(budget)
            out_dir = self.root / "retrieval" / corpus_id
            if not out_dir.exists():
                continue
            report_texts = []
            for retriever in self.config.retrievers:
                evals_path = out_dir / f"evals-{retriever}.jsonl"
                if not evals_path.exists():
                    continue
                evals = [
                    metrics.RetrievalEval(
                        query_id=r["query_id"],
                        system_id=r["system_id"],
                        backend_id=r["backend_id"],
                        evaluable=r["evaluable"],
                        metrics=r["metrics"],
                    )
                    for r in map(
                        json.loads,
                        evals_path.read_text(encoding="utf-8").splitlines(),
                    )
                ]
                report = metrics.aggregate_evals(evals)
                _write(out_dir / f"report-{retriever}.json",
                       metrics.report_to_json(report) + "\n")
                _write(out_dir / f"report-{retriever}.csv",
                       metrics.render_report_csv(report))
                report_texts.append(
                    f"== {retriever} @ {corpus_id} ==\n"
                    + metrics.render_report_table(report)
                )
                rendered.append(str(out_dir / f"report-{retriever}.json"))
            if report_texts:
                _write(out_dir / "report.txt", "\n".join(report_texts))
                rendered.append(str(out_dir / "report.txt"))
        labels_path = self.root / "relevance" / "labels.jsonl"
        if labels_path.exists():
            labels = [
                judge.RelevanceLabel(
                    query_id=r["query_id"],
                    passage_id=r["passage_id"],
                    judge_id=r["judge_id"],
                    rank=r["rank"],
                    source=r["source"],
                    chunk_budget=r["chunk_budget"],
                    score=r["score"],
                )
                for r in map(
                    json.loads,
                    labels_path.read_text(encoding="utf-8").splitlines(),
                )
            ]
            rows = judge.frequency_rows(labels, self.config.frequency_k_grid)
            _write(self.root / "relevance" / "frequency.txt",
                   judge.render_frequency_table(rows))
            rendered.append(str(self.root / "relevance" / "frequency.txt"))
        evals_path = self.root / "answers" / "answer_evals.jsonl"
        if evals_path.exists():
            evals = []
            for r in map(
                json.loads, evals_path.read_text(encoding="utf-8").splitlines()
            ):
                evals.append(
                    judge.AnswerEval(
                        query_id=r["query_id"],
                        arm=r["arm"],
                        answer=r["answer"],
                        scores=r["scores"],
                        ensemble=r["ensemble"],
                        accuracy_votes=r["accuracy_votes"],
                        accuracy=r["accuracy"],
                    )
                )
            summary = judge.summarize_answer_evals(evals)
            _write(
                self.root / "answers" / "quality.txt",
                judge.render_answer_table(
                    summary, label=f"{self.config.experiment} QA"
                ),
            )
            rendered.append(str(self.root / "answers" / "quality.txt"))
        return rendered

    # -- everything --

    def _has_labeled_source(self) -> bool:
        config = self.config
        if config.qa_path is not None:
            return True
        if config.queries_path is not None:
            return any(
                q.gold_passage_id is not None
                for q in load_queries(config.queries_path)
            )
        return False

    def run_all(self):
        config = self.config
        self.run_ingest()
        self.run_index()
        if any(r != BM25_SYSTEM for r in config.retrievers):
            self.run_embed()
        if config.rerankers and config.queries_path:
            self.run_ground_truth()
            self.run_retrieval_eval()
        if config.rerankers and config.classifier_datasets:
            self.run_classifier_eval()
        elif config.rerankers and self._has_labeled_source():
            self.run_mine()
            self.run_classifier_eval()
        if config.judges and config.queries_path and config.rerankers:
            self.run_relevance_judging()
        if config.qa_path and config.generator and config.judges:
            self.run_answer_eval()
        self.finalize()
        return self.record
