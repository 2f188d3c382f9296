"""Uniform client layer for embedding, rerank, and generation services.

Every backend is described by a BackendProfile. Profiles whose base_url uses
the ``stub:`` scheme are served in-process and deterministically, which keeps
the whole test suite hermetic:

  stub:                 pure function of (model_name, inputs)
  stub:fixture:<path>   canned outputs loaded from a JSON file

Everything else goes over HTTP with bearer auth, bounded retries, and a
per-backend in-flight semaphore:

  POST /v1/embed     {model, texts:[...]}                     -> {vectors, dim}
  POST /v1/rerank    {model, query, passages:[...]}           -> {scores, normalized}
  POST /v1/generate  {model, prompt, temperature, max_tokens} -> {text}
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import requests

from .errors import ConfigError, ProtocolError, TransportError

logger = logging.getLogger(__name__)

STUB_DIM = 64
STUB_LOGIT_SCALE = 6.0

GENERATION_TEMPERATURE = 0.0
GENERATION_MAX_TOKENS = 512

# Base delay for exponential backoff between retries (seconds).
_BACKOFF_BASE = 0.1

KINDS = ("embed", "rerank", "generate")


@dataclass(frozen=True)
class BackendProfile:
    backend_id: str
    kind: str
    base_url: str
    model_name: str
    normalized: bool = False
    query_prefix: str | None = None
    passage_prefix: str | None = None
    timeout: float = 30.0
    max_retries: int = 2
    max_in_flight: int = 4
    auth_token_env: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.normalized and self.kind != "rerank":
            raise ConfigError("normalized only applies to rerank backends")
        if (self.query_prefix or self.passage_prefix) and self.kind != "embed":
            raise ConfigError("instruction prefixes only apply to embed backends")

    @property
    def is_stub(self) -> bool:
        return self.base_url.startswith("stub:")


def profile_from_dict(record: dict) -> BackendProfile:
    return BackendProfile(**record)


# ── deterministic stub backends ─────────────────────────────────────

def stub_vector(model_name: str, text: str, dim: int = STUB_DIM) -> np.ndarray:
    """Seeded unit-sphere vector; identical across processes and platforms."""
    digest = hashlib.sha256(f"{model_name}\x00{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    vector = rng.standard_normal(dim)
    vector /= np.linalg.norm(vector)
    return vector.astype(np.float32)


def _stub_cosine(model_name: str, query: str, passage: str) -> float:
    q = stub_vector(model_name, query).astype(np.float64)
    p = stub_vector(model_name, passage).astype(np.float64)
    return float(np.dot(q, p))


def _stub_generate(model_name: str, prompt: str) -> str:
    digest = hashlib.sha256(f"{model_name}\x00{prompt}".encode("utf-8")).hexdigest()
    return f"stub-response-{digest[:12]}"


@lru_cache(maxsize=32)
def _load_fixture(path: str) -> dict:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def _fixture_path(base_url: str) -> str:
    return base_url[len("stub:fixture:") :]


def _fixture_embed(fixture: dict, model_name: str, texts: list[str]) -> list[list[float]]:
    table = fixture.get("embed", {})
    dim = int(table.get("dim", STUB_DIM))
    vectors = table.get("vectors", {})
    out = []
    for text in texts:
        if text in vectors:
            out.append([float(x) for x in vectors[text]])
        else:
            out.append(stub_vector(model_name, text, dim=dim).tolist())
    return out


def _fixture_rerank(fixture: dict, query: str, passages: list[str]) -> list[float]:
    table = fixture.get("rerank", {})
    pairs = table.get("pairs", {})
    default = float(table.get("default", 0.0))
    by_query = pairs.get(query, {})
    return [float(by_query.get(passage, default)) for passage in passages]


def _fixture_generate(fixture: dict, prompt: str) -> str:
    table = fixture.get("generate", {})
    digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
    by_hash = table.get("by_hash", {})
    if digest in by_hash:
        return by_hash[digest]
    for rule in table.get("responses", []):
        if all(needle in prompt for needle in rule.get("contains", [])):
            return rule["text"]
    return table.get("default", "")


# ── HTTP transport ───────────────────────────────────────────────────

_semaphores: dict[str, threading.BoundedSemaphore] = {}
_semaphores_lock = threading.Lock()


def _semaphore(profile: BackendProfile) -> threading.BoundedSemaphore:
    with _semaphores_lock:
        sem = _semaphores.get(profile.backend_id)
        if sem is None:
            sem = threading.BoundedSemaphore(profile.max_in_flight)
            _semaphores[profile.backend_id] = sem
        return sem


def _post(profile: BackendProfile, path: str, payload: dict) -> dict:
    url = profile.base_url.rstrip("/") + path
    headers = {}
    if profile.auth_token_env:
        token = os.environ.get(profile.auth_token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
    last_error: Exception | None = None
    with _semaphore(profile):
        for attempt in range(profile.max_retries + 1):
            try:
                response = requests.post(
                    url, json=payload, timeout=profile.timeout, headers=headers
                )
                if response.status_code >= 500:
                    raise TransportError(
                        f"{profile.backend_id}: server error {response.status_code}"
                    )
                if response.status_code != 200:
                    raise ProtocolError(
                        f"{profile.backend_id}: unexpected status {response.status_code}"
                    )
                return response.json()
            except (requests.ConnectionError, requests.Timeout, TransportError) as exc:
                last_error = exc
                if attempt < profile.max_retries:
                    time.sleep(_BACKOFF_BASE * 2**attempt)
    raise TransportError(
        f"{profile.backend_id}: gave up after {profile.max_retries + 1} attempts"
    ) from last_error


# ── endpoint operations ──────────────────────────────────────────────

def embed(profile: BackendProfile, texts: list[str]) -> list[np.ndarray]:
    """One vector per input text, order preserved, uniform dimension."""
    if profile.kind != "embed":
        raise ConfigError(f"{profile.backend_id} is not an embed backend")
    if not texts:
        return []
    if profile.is_stub:
        if profile.base_url.startswith("stub:fixture:"):
            fixture = _load_fixture(_fixture_path(profile.base_url))
            raw = _fixture_embed(fixture, profile.model_name, texts)
        else:
            raw = [stub_vector(profile.model_name, text).tolist() for text in texts]
    else:
        body = _post(profile, "/v1/embed", {"model": profile.model_name, "texts": texts})
        raw = body.get("vectors")
        if raw is None:
            raise ProtocolError(f"{profile.backend_id}: response missing 'vectors'")
    if len(raw) != len(texts):
        raise ProtocolError(
            f"{profile.backend_id}: got {len(raw)} vectors for {len(texts)} texts"
        )
    dim = len(raw[0])
    vectors = []
    for values in raw:
        if len(values) != dim:
            raise ProtocolError(f"{profile.backend_id}: ragged vector dimensions")
        vectors.append(np.asarray(values, dtype=np.float32))
    return vectors


def rerank_score(profile: BackendProfile, query: str, passages: list[str]) -> list[float]:
    """One raw relevance score per passage, order preserved."""
    if profile.kind != "rerank":
        raise ConfigError(f"{profile.backend_id} is not a rerank backend")
    if not passages:
        return []
    if profile.is_stub:
        if profile.base_url.startswith("stub:fixture:"):
            fixture = _load_fixture(_fixture_path(profile.base_url))
            return _fixture_rerank(fixture, query, passages)
        scores = []
        for passage in passages:
            cos = _stub_cosine(profile.model_name, query, passage)
            scores.append((cos + 1) / 2 if profile.normalized else STUB_LOGIT_SCALE * cos)
        return scores
    body = _post(
        profile,
        "/v1/rerank",
        {"model": profile.model_name, "query": query, "passages": passages},
    )
    scores = body.get("scores")
    if scores is None:
        raise ProtocolError(f"{profile.backend_id}: response missing 'scores'")
    if len(scores) != len(passages):
        raise ProtocolError(
            f"{profile.backend_id}: got {len(scores)} scores for {len(passages)} passages"
        )
    if "normalized" in body and bool(body["normalized"]) != profile.normalized:
        logger.warning(
            "%s: server normalized=%s disagrees with profile", profile.backend_id,
            body["normalized"],
        )
    return [float(s) for s in scores]


def generate(
    profile: BackendProfile,
    prompt: str,
    temperature: float = GENERATION_TEMPERATURE,
    max_tokens: int = GENERATION_MAX_TOKENS,
) -> str:
    """Completion text under deterministic settings."""
    if profile.kind != "generate":
        raise ConfigError(f"{profile.backend_id} is not a generate backend")
    if profile.is_stub:
        if profile.base_url.startswith("stub:fixture:"):
            fixture = _load_fixture(_fixture_path(profile.base_url))
            return _fixture_generate(fixture, prompt)
        return _stub_generate(profile.model_name, prompt)
    body = _post(
        profile,
        "/v1/generate",
        {
            "model": profile.model_name,
            "prompt": prompt,
            "temperature": temperature,
            "max_tokens": max_tokens,
        },
    )
    text = body.get("text")
    if text is None:
        raise ProtocolError(f"{profile.backend_id}: response missing 'text'")
    return str(text)
