"""Real-model mode, exercised with tiny checkpoints built offline.

The recorded suite's requests are replayed against genuinely loaded
models. The tiny checkpoints share nothing with the recording stubs, so
unlike fixture mode only shapes, counts, and flags can be pinned here.
"""

import json
import math
from pathlib import Path

import pytest

pytest.importorskip("ragmeter_gateway")
torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

from fastapi.testclient import TestClient

from ragmeter_gateway.bindings import ModelBinding
from ragmeter_gateway.errors import StartupError
from ragmeter_gateway.service import create_app

SUITE = Path(__file__).resolve().parents[2] / "tests" / "data" / "wire_suite.json"

HIDDEN = 16
VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "tide", "turns", "twice", "a", "day", "tea", "leaf",
    "oxidation", "darkens", "bruised", "leaves", "##s", "why", "does",
    "what", "how", "is", "oxidized",
]


def save_tiny(kind: str, target: Path) -> Path:
    from transformers import (BertConfig, BertForSequenceClassification,
                              BertLMHeadModel, BertModel, BertTokenizer)

    target.mkdir(parents=True, exist_ok=True)
    (target / "vocab.txt").write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    BertTokenizer(str(target / "vocab.txt")).save_pretrained(target)
    torch.manual_seed(7)
    config = BertConfig(vocab_size=len(VOCAB), hidden_size=HIDDEN,
                        num_hidden_layers=1, num_attention_heads=2,
                        intermediate_size=32, max_position_embeddings=64)
    if kind == "embed":
        model = BertModel(config)
    elif kind == "rerank":
        config.num_labels = 1
        model = BertForSequenceClassification(config)
    else:
        config.is_decoder = True
        model = BertLMHeadModel(config)
    model.save_pretrained(target)
    return target


@pytest.fixture(scope="module")
def model_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-models")
    return {kind: save_tiny(kind, root / kind)
            for kind in ("embed", "rerank", "generate")}


@pytest.fixture(scope="module")
def client(model_dirs):
    bindings = [
        ModelBinding(kind="embed", model_name="suite-embed",
                     model_path=str(model_dirs["embed"]), max_batch=8),
        ModelBinding(kind="rerank", model_name="suite-rerank",
                     model_path=str(model_dirs["rerank"])),
        ModelBinding(kind="rerank", model_name="suite-rerank-n",
                     normalized=True, model_path=str(model_dirs["rerank"])),
        ModelBinding(kind="generate", model_name="suite-gen",
                     model_path=str(model_dirs["generate"])),
    ]
    with TestClient(create_app(bindings)) as c:
        yield c


@pytest.fixture(scope="module")
def entries():
    return json.loads(SUITE.read_text(encoding="utf-8"))["entries"]


def test_suite_requests_pass_shape_count_and_flag_checks(client, entries):
    for entry in entries:
        request = entry["request"]
        recorded = json.loads(entry["response"])
        resp = client.post(entry["path"], json=request)
        assert resp.status_code == 200, (entry["path"], resp.content)
        body = resp.json()
        if entry["path"] == "/v1/embed":
            vectors = body["vectors"]
            assert len(vectors) == len(request["texts"])
            assert {len(v) for v in vectors} == {HIDDEN}
            assert all(isinstance(x, float) for v in vectors for x in v)
        elif entry["path"] == "/v1/rerank":
            assert len(body["scores"]) == len(request["passages"])
            assert body["normalized"] == recorded["normalized"]
            if body["normalized"]:
                assert all(0.0 <= s <= 1.0 for s in body["scores"])
        else:
            assert isinstance(body["text"], str)


def test_real_mode_is_deterministic_across_repeats(client, entries):
    for entry in entries:
        first = client.post(entry["path"], json=entry["request"])
        second = client.post(entry["path"], json=entry["request"])
        assert first.content == second.content


def test_normalized_binding_applies_the_squash(client):
    query = "how is tea oxidized"
    passages = ["bruised leaves darken", "the tide turns"]
    raw = client.post("/v1/rerank", json={
        "model": "suite-rerank", "query": query, "passages": passages}).json()
    norm = client.post("/v1/rerank", json={
        "model": "suite-rerank-n", "query": query, "passages": passages}).json()
    assert raw["normalized"] is False
    assert norm["normalized"] is True
    # Same checkpoint behind both bindings, so normalized scores must be
    # exactly the squashed raw logits.
    for r, n in zip(raw["scores"], norm["scores"]):
        assert n == pytest.approx(1.0 / (1.0 + math.exp(-r)), abs=1e-6)


def test_batched_embeddings_match_solo_requests(client):
    texts = ["the tide turns twice", "tea leaf oxidation darkens", "a day"]
    batch = client.post("/v1/embed", json={
        "model": "suite-embed", "texts": texts}).json()["vectors"]
    for text, want in zip(texts, batch):
        solo = client.post("/v1/embed", json={
            "model": "suite-embed", "texts": [text]}).json()["vectors"][0]
        assert solo == pytest.approx(want, abs=1e-5)


def test_generate_respects_the_token_budget(client, model_dirs):
    tok = transformers.AutoTokenizer.from_pretrained(model_dirs["generate"])
    resp = client.post("/v1/generate", json={
        "model": "suite-gen", "prompt": "why does the tide turn",
        "temperature": 0.0, "max_tokens": 3}).json()
    ids = tok(resp["text"], add_special_tokens=False)["input_ids"]
    assert len(ids) <= 3


def test_missing_checkpoint_fails_startup_naming_the_binding(tmp_path):
    binding = ModelBinding(kind="embed", model_name="ghost",
                           model_path=str(tmp_path / "nowhere"))
    with pytest.raises(StartupError, match="embed/ghost"):
        create_app([binding])
