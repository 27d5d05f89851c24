"""Canonical JSON serialization and content hashing.

Artifacts must be byte-identical across runs and process restarts, so all
persisted JSON flows through ``canonical_json``: insertion-ordered fields,
no whitespace, floats rounded to 4 decimal places with banker's rounding at
serialization time only. Exact-decimal columns (reconciliation proofs) are
carried as strings and bypass float rounding entirely.
"""

from __future__ import annotations

import hashlib
import json
import math
from decimal import ROUND_HALF_EVEN, Context, Decimal

DISPLAY_PLACES = Decimal("0.0001")
# Wide enough for any finite float at 4 decimal places.
_CTX = Context(prec=400)


def round_display(value: float) -> float:
    """Round to 4 decimals, half-even. Applied only at serialization."""
    if value != value or value in (float("inf"), float("-inf")):
        return value
    q = Decimal(repr(value)).quantize(
        DISPLAY_PLACES, rounding=ROUND_HALF_EVEN, context=_CTX
    )
    return float(q)


def format_display(value: float) -> str:
    """The display-string form of a number after fixed rounding.

    Narrative templates and their anchors both use this, so a claim in text
    string-matches its table cell exactly.
    """
    if value != value:
        return "NaN"
    q = Decimal(repr(value)).quantize(
        DISPLAY_PLACES, rounding=ROUND_HALF_EVEN, context=_CTX
    )
    text = str(q.normalize()) if q != 0 else "0"
    # Decimal.normalize renders 100 as 1E+2; undo scientific notation.
    if "E" in text or "e" in text:
        text = format(q.normalize(), "f")
    return text


def _prepare(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        return round_display(obj)
    if isinstance(obj, Decimal):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _prepare(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_prepare(v) for v in obj]
    return obj


def canonical_json(obj) -> bytes:
    """Deterministic UTF-8 JSON bytes for hashing and storage."""
    return json.dumps(
        _prepare(obj), ensure_ascii=False, separators=(",", ":"), allow_nan=False
    ).encode("utf-8")


def content_hash(obj) -> str:
    """sha256 hex digest of the canonical JSON form."""
    return hashlib.sha256(canonical_json(obj)).hexdigest()


def hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
