"""Backend client: stub determinism, fixture stubs, and HTTP transport."""

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from ragmeter import backend
from ragmeter.backend import BackendProfile
from ragmeter.errors import ConfigError, ProtocolError, TransportError


# ── profile validation ───────────────────────────────────────────────

def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        BackendProfile(backend_id="x", kind="summarize", base_url="stub:", model_name="m")


def test_normalized_only_for_rerank():
    with pytest.raises(ConfigError):
        BackendProfile(backend_id="x", kind="embed", base_url="stub:",
                       model_name="m", normalized=True)


def test_prefixes_only_for_embed():
    with pytest.raises(ConfigError):
        BackendProfile(backend_id="x", kind="rerank", base_url="stub:",
                       model_name="m", query_prefix="query: ")


def test_kind_mismatch_rejected_per_operation():
    emb = BackendProfile(backend_id="e", kind="embed", base_url="stub:", model_name="m")
    with pytest.raises(ConfigError):
        backend.rerank_score(emb, "q", ["p"])
    with pytest.raises(ConfigError):
        backend.generate(emb, "prompt")


# ── bare stub backends ───────────────────────────────────────────────

def stub_profile(kind, backend_id="s", **kw):
    return BackendProfile(backend_id=backend_id, kind=kind, base_url="stub:",
                          model_name="m", **kw)


def test_stub_embed_deterministic_unit_vectors():
    profile = stub_profile("embed")
    first = backend.embed(profile, ["alpha", "beta"])
    second = backend.embed(profile, ["alpha", "beta"])
    assert len(first) == 2
    for a, b in zip(first, second):
        assert a.dtype == np.float32
        assert a.shape == (backend.STUB_DIM,)
        assert np.array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-5)
    assert not np.array_equal(first[0], first[1])


def test_stub_embed_depends_on_model_name():
    a = backend.embed(stub_profile("embed"), ["text"])[0]
    other = BackendProfile(backend_id="s2", kind="embed", base_url="stub:",
                           model_name="m2")
    b = backend.embed(other, ["text"])[0]
    assert not np.array_equal(a, b)


def test_stub_embed_order_preserved():
    profile = stub_profile("embed")
    forward = backend.embed(profile, ["one", "two", "three"])
    backward = backend.embed(profile, ["three", "two", "one"])
    assert np.array_equal(forward[0], backward[2])
    assert np.array_equal(forward[1], backward[1])


def test_stub_embed_empty_input():
    assert backend.embed(stub_profile("embed"), []) == []


def test_stub_rerank_logit_vs_normalized():
    raw = stub_profile("rerank")
    norm = stub_profile("rerank", backend_id="sn", normalized=True)
    logits = backend.rerank_score(raw, "q", ["p1", "p2"])
    probs = backend.rerank_score(norm, "q", ["p1", "p2"])
    for logit, prob in zip(logits, probs):
        cos = logit / backend.STUB_LOGIT_SCALE
        assert prob == pytest.approx((cos + 1) / 2, abs=1e-12)
        assert 0.0 <= prob <= 1.0


def test_stub_rerank_empty_input():
    assert backend.rerank_score(stub_profile("rerank"), "q", []) == []


def test_stub_generate_format():
    profile = stub_profile("generate")
    text = backend.generate(profile, "what is a lock?")
    digest = hashlib.sha256(b"m\x00what is a lock?").hexdigest()
    assert text == f"stub-response-{digest[:12]}"
    assert backend.generate(profile, "what is a lock?") == text


# ── fixture stubs ────────────────────────────────────────────────────

@pytest.fixture
def fixture_file(tmp_path):
    prompt = "the exact prompt"
    payload = {
        "embed": {"dim": 3, "vectors": {"known": [1.0, 0.0, 0.0]}},
        "rerank": {"pairs": {"q1": {"pa": 2.5, "pb": -1.0}}, "default": 0.25},
        "generate": {
            "by_hash": {hashlib.sha256(prompt.encode()).hexdigest(): "hashed reply"},
            "responses": [{"contains": ["QUESTION", "tides"], "text": "tidal reply"}],
            "default": "fallback",
        },
    }
    path = tmp_path / "fixture.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def fixture_profile(kind, path, **kw):
    return BackendProfile(backend_id=f"fx-{kind}", kind=kind,
                          base_url=f"stub:fixture:{path}", model_name="m", **kw)


def test_fixture_embed_known_and_fallback(fixture_file):
    profile = fixture_profile("embed", fixture_file)
    known, unknown = backend.embed(profile, ["known", "unknown"])
    assert known.tolist() == [1.0, 0.0, 0.0]
    # absent texts fall back to seeded vectors at the fixture dim
    assert unknown.shape == (3,)
    assert np.linalg.norm(unknown) == pytest.approx(1.0, abs=1e-5)


def test_fixture_rerank_pairs_and_default(fixture_file):
    profile = fixture_profile("rerank", fixture_file)
    assert backend.rerank_score(profile, "q1", ["pa", "pb", "pc"]) == [2.5, -1.0, 0.25]
    assert backend.rerank_score(profile, "q2", ["pa"]) == [0.25]


def test_fixture_generate_hash_contains_default(fixture_file):
    profile = fixture_profile("generate", fixture_file)
    assert backend.generate(profile, "the exact prompt") == "hashed reply"
    assert backend.generate(profile, "QUESTION about the tides") == "tidal reply"
    assert backend.generate(profile, "no rule matches") == "fallback"


# ── HTTP transport against a local instrumented server ───────────────

class _ServerState:
    def __init__(self):
        self.lock = threading.Lock()
        self.requests: list[tuple[str, dict, dict]] = []
        self.responses: list[tuple[int, dict]] = []
        self.default: tuple[int, dict] = (200, {})
        self.delay = 0.0
        self.in_flight = 0
        self.peak_in_flight = 0


class _Handler(BaseHTTPRequestHandler):
    state: _ServerState

    def do_POST(self):
        state = self.state
        with state.lock:
            state.in_flight += 1
            state.peak_in_flight = max(state.peak_in_flight, state.in_flight)
        try:
            if state.delay:
                threading.Event().wait(state.delay)
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"{}")
            with state.lock:
                state.requests.append((self.path, dict(self.headers), body))
                status, payload = (
                    state.responses.pop(0) if state.responses else state.default
                )
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        finally:
            with state.lock:
                state.in_flight -= 1

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    state = _ServerState()
    handler = type("BoundHandler", (_Handler,), {"state": state})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(
        target=server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True
    )
    thread.start()
    yield state, f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    server.server_close()


_uid = iter(range(10_000))


def http_profile(kind, base_url, **kw):
    # unique backend_id per test: in-flight semaphores are cached by id
    return BackendProfile(backend_id=f"h{next(_uid)}", kind=kind,
                          base_url=base_url, model_name="m", **kw)


def test_http_embed_roundtrip(http_server):
    state, url = http_server
    state.default = (200, {"vectors": [[1.0, 2.0], [3.0, 4.0]], "dim": 2})
    profile = http_profile("embed", url)
    vectors = backend.embed(profile, ["a", "b"])
    assert [v.tolist() for v in vectors] == [[1.0, 2.0], [3.0, 4.0]]
    path, _, body = state.requests[0]
    assert path == "/v1/embed"
    assert body == {"model": "m", "texts": ["a", "b"]}


def test_http_rerank_roundtrip(http_server):
    state, url = http_server
    state.default = (200, {"scores": [0.5, -1.25], "normalized": False})
    profile = http_profile("rerank", url)
    assert backend.rerank_score(profile, "q", ["p1", "p2"]) == [0.5, -1.25]
    path, _, body = state.requests[0]
    assert path == "/v1/rerank"
    assert body == {"model": "m", "query": "q", "passages": ["p1", "p2"]}


def test_http_generate_roundtrip(http_server):
    state, url = http_server
    state.default = (200, {"text": "an answer"})
    profile = http_profile("generate", url)
    assert backend.generate(profile, "why?") == "an answer"
    path, _, body = state.requests[0]
    assert path == "/v1/generate"
    assert body == {"model": "m", "prompt": "why?",
                    "temperature": 0.0, "max_tokens": 512}


def test_http_bearer_token_from_env(http_server, monkeypatch):
    state, url = http_server
    state.default = (200, {"text": "ok"})
    monkeypatch.setenv("RAGMETER_TEST_TOKEN", "sekrit")
    profile = http_profile("generate", url, auth_token_env="RAGMETER_TEST_TOKEN")
    backend.generate(profile, "p")
    _, headers, _ = state.requests[0]
    assert headers.get("Authorization") == "Bearer sekrit"


def test_http_no_token_header_when_env_unset(http_server, monkeypatch):
    state, url = http_server
    state.default = (200, {"text": "ok"})
    monkeypatch.delenv("RAGMETER_TEST_TOKEN", raising=False)
    profile = http_profile("generate", url, auth_token_env="RAGMETER_TEST_TOKEN")
    backend.generate(profile, "p")
    _, headers, _ = state.requests[0]
    assert "Authorization" not in headers


def test_http_wrong_vector_count(http_server):
    state, url = http_server
    state.default = (200, {"vectors": [[1.0]]})
    with pytest.raises(ProtocolError, match="1 vectors for 2"):
        backend.embed(http_profile("embed", url), ["a", "b"])


def test_http_ragged_vectors(http_server):
    state, url = http_server
    state.default = (200, {"vectors": [[1.0, 2.0], [3.0]]})
    with pytest.raises(ProtocolError, match="ragged"):
        backend.embed(http_profile("embed", url), ["a", "b"])


def test_http_missing_field(http_server):
    state, url = http_server
    state.default = (200, {"wrong": []})
    with pytest.raises(ProtocolError, match="missing 'scores'"):
        backend.rerank_score(http_profile("rerank", url), "q", ["p"])


def test_http_4xx_fails_without_retry(http_server):
    state, url = http_server
    state.default = (400, {"error": "bad request"})
    profile = http_profile("generate", url, max_retries=3)
    with pytest.raises(ProtocolError, match="status 400"):
        backend.generate(profile, "p")
    assert len(state.requests) == 1


def test_http_5xx_retried_then_gives_up(http_server):
    state, url = http_server
    state.default = (503, {"error": "down"})
    profile = http_profile("generate", url, max_retries=1)
    with pytest.raises(TransportError, match="gave up after 2 attempts"):
        backend.generate(profile, "p")
    # retry budget: exactly 1 + max_retries requests hit the wire
    assert len(state.requests) == 2


def test_http_5xx_then_recovery(http_server):
    state, url = http_server
    state.responses = [(500, {}), (200, {"text": "recovered"})]
    profile = http_profile("generate", url, max_retries=2)
    assert backend.generate(profile, "p") == "recovered"
    assert len(state.requests) == 2


def test_http_connection_refused_exhausts_budget():
    profile = http_profile("generate", "http://127.0.0.1:1", max_retries=0)
    with pytest.raises(TransportError, match="gave up after 1 attempts"):
        backend.generate(profile, "p")


def test_http_normalized_disagreement_warns(http_server, caplog):
    state, url = http_server
    state.default = (200, {"scores": [0.5], "normalized": True})
    profile = http_profile("rerank", url, normalized=False)
    with caplog.at_level("WARNING", logger="ragmeter.backend"):
        scores = backend.rerank_score(profile, "q", ["p"])
    assert scores == [0.5]
    assert any("disagrees with profile" in r.message for r in caplog.records)


def test_http_in_flight_bounded(http_server):
    state, url = http_server
    state.default = (200, {"vectors": [[1.0, 0.0]]})
    state.delay = 0.05
    profile = http_profile("embed", url, max_in_flight=2, timeout=10.0)

    errors: list[Exception] = []

    def call():
        try:
            backend.embed(profile, ["t"])
        except Exception as exc:  # pragma: no cover - surfaced via assert below
            errors.append(exc)

    threads = [threading.Thread(target=call) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(state.requests) == 8
    assert state.peak_in_flight <= 2
