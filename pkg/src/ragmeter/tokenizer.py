"""Reference subword tokenizer used for all chunk budgets and token counts.

The harness needs one deterministic tokenizer so that chunk boundaries are
reproducible across machines and backends. Backends tokenize however they
like; their counts are never reconciled with ours.

The scheme is lossless: every token owns the whitespace that precedes it,
so ``"".join(encode(text)) == text`` for any input. Word runs longer than
``MAX_WORD_PIECE`` characters are split into fixed-width subword pieces.
"""

from __future__ import annotations

import re

TOKENIZER_ID = "ws-subword-12-v1"

MAX_WORD_PIECE = 12

_PIECE = re.compile(r"\s+|\w+|[^\w\s]", re.UNICODE)


def encode(text: str) -> list[str]:
    """Split text into subword tokens; concatenating them restores the input."""
    tokens: list[str] = []
    pending_ws = ""
    for match in _PIECE.finditer(text):
        piece = match.group()
        if piece.isspace():
            pending_ws += piece
            continue
        if len(piece) > MAX_WORD_PIECE:
            subpieces = [
                piece[i : i + MAX_WORD_PIECE]
                for i in range(0, len(piece), MAX_WORD_PIECE)
            ]
        else:
            subpieces = [piece]
        tokens.append(pending_ws + subpieces[0])
        pending_ws = ""
        tokens.extend(subpieces[1:])
    if pending_ws:
        # Trailing whitespace has no following token; keep it lossless.
        if tokens:
            tokens[-1] += pending_ws
        else:
            tokens.append(pending_ws)
    return tokens


def count_tokens(text: str) -> int:
    return len(encode(text))
