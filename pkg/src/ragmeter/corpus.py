"""Corpus ingest: split raw documents into token-bounded passages.

Normalization collapses whitespace runs to single spaces and keeps paragraph
breaks as single newlines; paragraph breaks always end a sentence. Chunking
packs whole sentences greedily until the next one would blow the budget, and
falls back to flat token windows when a single sentence is itself over
budget. Because tokens own their leading whitespace, concatenating the
passages of a document reproduces its normalized text byte for byte.

A corpus is persisted as one directory: ``manifest.json`` plus
``passages.jsonl`` (one passage object per line). The manifest checksum is
the SHA-256 of the passage file, so any edit to stored text is detectable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path

from . import tokenizer
from .errors import (
    ConfigError,
    CorpusCorruptedError,
    CorpusNotFoundError,
    DuplicateDocError,
    EmptyCorpusError,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PASSAGES_NAME = "passages.jsonl"


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str
    source_uri: str = ""


@dataclass(frozen=True)
class Passage:
    passage_id: str
    doc_id: str
    seq: int
    text: str
    token_count: int
    chunk_budget: int


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    gold_passage_id: str | None = None
    gold_answer: str | None = None


@dataclass(frozen=True)
class CorpusManifest:
    corpus_id: str
    chunk_budget: int
    tokenizer_id: str
    passage_count: int
    doc_count: int
    checksum: str


_PARAGRAPH_SPLIT = re.compile(r"\n\s*\n")

# Sentence-terminal token: .!? optionally wrapped in closing quotes/brackets.
_TERMINAL = re.compile(r"^[.!?][\"')\]]*$")
_OPENERS = "\"'([“‘"


def normalize_text(text: str) -> str:
    """Collapse whitespace runs; paragraph breaks become single newlines."""
    parts = []
    for para in _PARAGRAPH_SPLIT.split(text):
        collapsed = " ".join(para.split())
        if collapsed:
            parts.append(collapsed)
    return "\n".join(parts)


def _is_sentence_boundary(token: str, next_token: str) -> bool:
    stripped = token.lstrip()
    if not next_token or not next_token[0].isspace():
        return False
    if "\n" in next_token:
        return True
    if not _TERMINAL.match(stripped):
        return False
    following = next_token.lstrip().lstrip(_OPENERS)
    return bool(following) and (following[0].isupper() or following[0].isdigit())


def split_sentences(tokens: list[str]) -> list[list[str]]:
    """Group a token stream into sentences (terminal punctuation heuristic)."""
    sentences: list[list[str]] = []
    current: list[str] = []
    for i, token in enumerate(tokens):
        current.append(token)
        if i + 1 < len(tokens) and _is_sentence_boundary(token, tokens[i + 1]):
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def chunk_document(doc: Document, chunk_budget: int) -> list[Passage]:
    """Chunk one document into passages of at most chunk_budget tokens."""
    normalized = normalize_text(doc.text)
    if not normalized:
        raise ValueError(f"document {doc.doc_id!r} is empty after normalization")
    tokens = tokenizer.encode(normalized)

    units: list[list[str]] = []
    for sentence in split_sentences(tokens):
        if len(sentence) <= chunk_budget:
            units.append(sentence)
        else:
            units.extend(
                sentence[i : i + chunk_budget]
                for i in range(0, len(sentence), chunk_budget)
            )

    chunks: list[list[str]] = []
    current: list[str] = []
    for unit in units:
        if current and len(current) + len(unit) > chunk_budget:
            chunks.append(current)
            current = []
        current.extend(unit)
    if current:
        chunks.append(current)

    return [
        Passage(
            passage_id=f"{doc.doc_id}:{seq:04d}",
            doc_id=doc.doc_id,
            seq=seq,
            text="".join(chunk),
            token_count=len(chunk),
            chunk_budget=chunk_budget,
        )
        for seq, chunk in enumerate(chunks)
    ]


def _corpus_dir(root: str | Path, corpus_id: str) -> Path:
    return Path(root) / corpus_id


def ingest(
    documents: list[Document],
    chunk_budget: int,
    tokenizer_id: str = tokenizer.TOKENIZER_ID,
    *,
    corpus_id: str,
    root: str | Path,
) -> CorpusManifest:
    """Chunk documents and persist the passage store; returns the manifest.

    Documents that are empty after normalization are rejected individually
    (logged, ingest continues); a duplicate doc_id fails the whole ingest.
    """
    if chunk_budget < 16:
        raise ConfigError(f"chunk_budget must be >= 16, got {chunk_budget}")
    if tokenizer_id != tokenizer.TOKENIZER_ID:
        raise ConfigError(f"unknown tokenizer_id {tokenizer_id!r}")
    seen: set[str] = set()
    for doc in documents:
        if doc.doc_id in seen:
            raise DuplicateDocError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)

    passages: list[Passage] = []
    accepted = 0
    for doc in sorted(documents, key=lambda d: d.doc_id):
        try:
            doc_passages = chunk_document(doc, chunk_budget)
        except ValueError as exc:
            logger.warning("rejected document %s: %s", doc.doc_id, exc)
            continue
        passages.extend(doc_passages)
        accepted += 1

    directory = _corpus_dir(root, corpus_id)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps(asdict(p), ensure_ascii=False, sort_keys=True) for p in passages
    ]
    payload = ("".join(line + "\n" for line in lines)).encode("utf-8")
    (directory / PASSAGES_NAME).write_bytes(payload)
    checksum = hashlib.sha256(payload).hexdigest()

    manifest = CorpusManifest(
        corpus_id=corpus_id,
        chunk_budget=chunk_budget,
        tokenizer_id=tokenizer_id,
        passage_count=len(passages),
        doc_count=accepted,
        checksum=checksum,
    )
    (directory / MANIFEST_NAME).write_text(
        json.dumps(asdict(manifest), ensure_ascii=False, sort_keys=True, indent=2)
        + "\n",
        encoding="utf-8",
    )
    return manifest


def load_manifest(corpus_id: str, root: str | Path) -> CorpusManifest:
    path = _corpus_dir(root, corpus_id) / MANIFEST_NAME
    if not path.exists():
        raise CorpusNotFoundError(f"no corpus {corpus_id!r} under {root}")
    return CorpusManifest(**json.loads(path.read_text(encoding="utf-8")))


def load_passages(corpus_id: str, root: str | Path) -> list[Passage]:
    """Read the passage store back, verifying the manifest checksum."""
    manifest = load_manifest(corpus_id, root)
    payload = (_corpus_dir(root, corpus_id) / PASSAGES_NAME).read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest.checksum:
        raise CorpusCorruptedError(f"checksum mismatch for corpus {corpus_id!r}")
    passages = [
        Passage(**json.loads(line))
        for line in payload.decode("utf-8").splitlines()
        if line
    ]
    passages.sort(key=lambda p: (p.doc_id, p.seq))
    return passages


def load_documents(path: str | Path) -> list[Document]:
    """Read documents from a directory of .txt files or a JSONL file."""
    path = Path(path)
    if path.is_dir():
        docs = []
        for file in sorted(path.glob("*.txt")):
            docs.append(
                Document(
                    doc_id=file.stem,
                    title=file.stem,
                    text=file.read_text(encoding="utf-8"),
                    source_uri=str(file),
                )
            )
        if not docs:
            raise EmptyCorpusError(f"no .txt documents in {path}")
        return docs
    docs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        docs.append(
            Document(
                doc_id=record["doc_id"],
                title=record.get("title", record["doc_id"]),
                text=record["text"],
                source_uri=record.get("source_uri", str(path)),
            )
        )
    if not docs:
        raise EmptyCorpusError(f"no documents in {path}")
    return docs


def sample_corpus_dir() -> Path:
    """Directory holding the small corpus bundled with the harness."""
    return Path(__file__).parent / "data" / "sample_corpus"
