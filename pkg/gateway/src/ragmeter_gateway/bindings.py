"""Model bindings: which models this gateway serves, and how.

One binding per (kind, model_name). Requests address a binding by the model
name they carry; the route determines the kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import BindingError

KINDS = ("embed", "rerank", "generate")

DEFAULT_MAX_BATCH = 32


@dataclass(frozen=True)
class ModelBinding:
    kind: str
    model_name: str
    device: str = "cpu"
    normalized: bool = False
    max_batch: int = DEFAULT_MAX_BATCH
    # passed through to the loader, e.g. a local weights directory
    model_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise BindingError(f"unknown binding kind {self.kind!r}")
        if not self.model_name:
            raise BindingError("model_name must be non-empty")
        if self.max_batch < 1:
            raise BindingError(f"max_batch must be >= 1, got {self.max_batch}")
        if self.normalized and self.kind != "rerank":
            raise BindingError("normalized only applies to rerank bindings")

    @property
    def label(self) -> str:
        return f"{self.kind}/{self.model_name}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "model_name": self.model_name,
            "device": self.device,
            "normalized": self.normalized,
            "max_batch": self.max_batch,
        }


_FIELDS = {f.name for f in fields(ModelBinding)}


def binding_from_dict(record: dict) -> ModelBinding:
    unknown = set(record) - _FIELDS
    if unknown:
        raise BindingError(f"unknown binding keys: {sorted(unknown)}")
    try:
        return ModelBinding(**record)
    except TypeError as exc:
        raise BindingError(str(exc)) from exc


def validate_bindings(bindings: list[ModelBinding]) -> list[ModelBinding]:
    seen: set[tuple[str, str]] = set()
    for binding in bindings:
        key = (binding.kind, binding.model_name)
        if key in seen:
            raise BindingError(f"duplicate binding {binding.label}")
        seen.add(key)
    return bindings


def load_bindings(path: str | Path) -> list[ModelBinding]:
    """Read the config file: {"bindings": [{kind, model_name, ...}, ...]}."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise BindingError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise BindingError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("bindings"), list):
        raise BindingError(f"config file {path} needs a top-level 'bindings' list")
    return validate_bindings([binding_from_dict(r) for r in raw["bindings"]])
