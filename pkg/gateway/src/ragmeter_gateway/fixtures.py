"""Canned-response mode.

The fixture file is the recorded request/response suite: each entry keys an
exact response body (stored as text, served verbatim) by endpoint path plus
the canonicalized request payload. Serving stored bytes, not re-serialized
JSON, is what makes replies byte-identical across restarts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import GatewayError


def canonical_request(payload: dict) -> str:
    return json.dumps(payload, ensure_ascii=False, sort_keys=True,
                      separators=(",", ":"))


def request_key(path: str, payload: dict) -> str:
    message = f"{path}\n{canonical_request(payload)}"
    return hashlib.sha256(message.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RecordedResponse:
    status: int
    body: bytes


class FixtureStore:
    def __init__(self, entries: list[dict], source: str = "<memory>"):
        self.source = source
        self._table: dict[str, RecordedResponse] = {}
        for i, entry in enumerate(entries):
            try:
                key = request_key(entry["path"], entry["request"])
                response = RecordedResponse(
                    status=int(entry.get("status", 200)),
                    body=entry["response"].encode("utf-8"),
                )
            except (KeyError, TypeError, AttributeError) as exc:
                raise GatewayError(
                    f"{source}: fixture entry {i} is malformed: {exc!r}"
                ) from exc
            self._table[key] = response

    def __len__(self) -> int:
        return len(self._table)

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureStore":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise GatewayError(f"fixture file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise GatewayError(f"fixture file {path} is not valid JSON: {exc}") from exc
        entries = raw.get("entries") if isinstance(raw, dict) else None
        if not isinstance(entries, list):
            raise GatewayError(f"fixture file {path} needs a top-level 'entries' list")
        return cls(entries, source=str(path))

    def lookup(self, path: str, payload: dict) -> RecordedResponse | None:
        return self._table.get(request_key(path, payload))
