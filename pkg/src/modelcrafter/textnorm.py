"""Text canonicalization helpers used for dedup keys, identifiers and hashing."""

from __future__ import annotations

import hashlib
import re

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)
_WS = re.compile(r"\s+")


def normalize_key(text: str) -> str:
    """Dedup key: lowercase, strip punctuation, collapse whitespace."""
    lowered = _PUNCT.sub(" ", text.lower())
    return _WS.sub(" ", lowered).strip()


def identifier(text: str) -> str:
    """Stable snake_case identifier derived from arbitrary text."""
    return normalize_key(text).replace(" ", "_")


def words(text: str) -> list[str]:
    """Normalized word list (the basis for query word counts)."""
    key = normalize_key(text)
    return key.split(" ") if key else []


def tokens_with_bigrams(text: str) -> list[str]:
    """Words plus underscore-joined adjacent bigrams, first-seen order.

    This is the token set the mock embedder hashes, so that a query such as
    "traffic stop sign" shares the token ``stop_sign`` with a record tagged
    with that attribute identifier.
    """
    ws = words(text)
    out: list[str] = []
    seen: set[str] = set()
    for tok in ws + [f"{a}_{b}" for a, b in zip(ws, ws[1:])]:
        if tok not in seen:
            seen.add(tok)
            out.append(tok)
    return out


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def stable_u64(*parts: str) -> int:
    """Platform-stable 64-bit integer from text parts (for seeding RNGs)."""
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
