"""HTTP service.

Endpoints mirror the retrieval client's wire protocol:

  POST /v1/embed     {model, texts:[...]}                     -> {vectors}
  POST /v1/rerank    {model, query, passages:[...]}           -> {scores, normalized}
  POST /v1/generate  {model, prompt, temperature, max_tokens} -> {text}
  GET  /health                                                -> {status, mode, bindings}

Two modes. With a fixture store the app replays recorded bytes and never
touches a model. Otherwise every binding's model is loaded up front (a load
failure aborts startup, naming the binding) and requests are served through
a per-binding micro-batcher, so one thread owns each model and concurrent
callers share forward passes without knowing it.
"""

from __future__ import annotations

import os
from contextlib import asynccontextmanager
from typing import Callable, Sequence

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .batching import MicroBatcher
from .bindings import ModelBinding, validate_bindings
from .errors import StartupError
from .fixtures import FixtureStore
from .models import build_runner


class _Served:
    """One binding wired to its loaded runner and batcher."""

    def __init__(self, binding: ModelBinding, runner, batcher: MicroBatcher):
        self.binding = binding
        self.runner = runner
        self.batcher = batcher


def _error(status: int, message: str, **extra) -> JSONResponse:
    return JSONResponse({"error": message, **extra}, status_code=status)


def _auth_token(auth_token_env: str | None) -> str | None:
    if auth_token_env is None:
        return None
    token = os.environ.get(auth_token_env, "")
    if not token:
        raise StartupError(
            f"auth token environment variable {auth_token_env!r} is unset or empty")
    return token


def create_app(
    bindings: Sequence[ModelBinding],
    *,
    fixture: FixtureStore | None = None,
    auth_token_env: str | None = None,
    runner_factory: Callable[[ModelBinding], object] = build_runner,
) -> FastAPI:
    bindings = validate_bindings(list(bindings))
    token = _auth_token(auth_token_env)
    mode = "fixture" if fixture is not None else "models"

    served: dict[tuple[str, str], _Served] = {}
    if fixture is None:
        for binding in bindings:
            runner = runner_factory(binding)
            batcher = MicroBatcher(
                runner.run, binding.max_batch, name=binding.label)
            served[(binding.kind, binding.model_name)] = _Served(
                binding, runner, batcher)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        for unit in served.values():
            unit.batcher.close()

    app = FastAPI(lifespan=lifespan, docs_url=None, redoc_url=None)

    def _unauthorized(request: Request) -> JSONResponse | None:
        if token is None:
            return None
        if request.headers.get("Authorization") == f"Bearer {token}":
            return None
        return _error(401, "unauthorized")

    async def _read_json(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return None, _error(400, "request body is not valid JSON")
        if not isinstance(payload, dict):
            return None, _error(400, "request body must be a JSON object")
        return payload, None

    def _fixture_reply(path: str, payload: dict) -> Response:
        recorded = fixture.lookup(path, payload)
        if recorded is None:
            return _error(404, "no recorded response for this request")
        return Response(content=recorded.body, status_code=recorded.status,
                        media_type="application/json")

    def _lookup(kind: str, model: object) -> tuple[_Served | None, JSONResponse | None]:
        if not isinstance(model, str) or not model:
            return None, _error(400, "'model' must be a non-empty string")
        unit = served.get((kind, model))
        if unit is None:
            return None, _error(404, f"no {kind} binding for model {model!r}")
        return unit, None

    def _string_list(payload: dict, field: str) -> tuple[list[str] | None, JSONResponse | None]:
        values = payload.get(field)
        if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            return None, _error(400, f"'{field}' must be a list of strings")
        return values, None

    @app.post("/v1/embed")
    async def embed(request: Request):
        denied = _unauthorized(request)
        if denied is not None:
            return denied
        payload, bad = await _read_json(request)
        if bad is not None:
            return bad
        if fixture is not None:
            return _fixture_reply("/v1/embed", payload)
        unit, bad = _lookup("embed", payload.get("model"))
        if bad is not None:
            return bad
        texts, bad = _string_list(payload, "texts")
        if bad is not None:
            return bad
        if len(texts) > unit.binding.max_batch:
            return _error(413, f"batch of {len(texts)} exceeds the binding limit",
                          max_batch=unit.binding.max_batch)
        vectors = await run_in_threadpool(unit.batcher.submit, texts)
        return JSONResponse({"vectors": vectors})

    @app.post("/v1/rerank")
    async def rerank(request: Request):
        denied = _unauthorized(request)
        if denied is not None:
            return denied
        payload, bad = await _read_json(request)
        if bad is not None:
            return bad
        if fixture is not None:
            return _fixture_reply("/v1/rerank", payload)
        unit, bad = _lookup("rerank", payload.get("model"))
        if bad is not None:
            return bad
        query = payload.get("query")
        if not isinstance(query, str):
            return _error(400, "'query' must be a string")
        passages, bad = _string_list(payload, "passages")
        if bad is not None:
            return bad
        if len(passages) > unit.binding.max_batch:
            return _error(413, f"batch of {len(passages)} exceeds the binding limit",
                          max_batch=unit.binding.max_batch)
        pairs = [(query, passage) for passage in passages]
        scores = await run_in_threadpool(unit.batcher.submit, pairs)
        return JSONResponse({"scores": scores,
                             "normalized": unit.binding.normalized})

    @app.post("/v1/generate")
    async def generate(request: Request):
        denied = _unauthorized(request)
        if denied is not None:
            return denied
        payload, bad = await _read_json(request)
        if bad is not None:
            return bad
        if fixture is not None:
            return _fixture_reply("/v1/generate", payload)
        unit, bad = _lookup("generate", payload.get("model"))
        if bad is not None:
            return bad
        prompt = payload.get("prompt")
        if not isinstance(prompt, str):
            return _error(400, "'prompt' must be a string")
        max_tokens = payload.get("max_tokens", 512)
        if not isinstance(max_tokens, int) or max_tokens < 1:
            return _error(400, "'max_tokens' must be a positive integer")
        # Decoding is always greedy; a temperature in the request is accepted
        # and ignored so the same prompt always yields the same text.
        texts = await run_in_threadpool(
            unit.batcher.submit, [(prompt, max_tokens)])
        return JSONResponse({"text": texts[0]})

    @app.get("/health")
    async def health():
        return JSONResponse({
            "status": "ok",
            "mode": mode,
            "bindings": [binding.to_dict() for binding in bindings],
        })

    return app
