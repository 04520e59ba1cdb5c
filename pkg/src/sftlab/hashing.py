"""Canonical hashing for configs and corpus files.

Run identity rests on these hashes, so the canonical form is pinned: keys
sorted, no whitespace, floats that carry an integral value normalized to ints
(so 3 and 3.0 hash identically), NaN/inf rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path


def _normalize(obj):
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite number {obj} cannot be canonicalized")
        if obj.is_integer() and abs(obj) < 2**53:
            return int(obj)
        return obj
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_normalize(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    """sha256 hex digest of the canonical JSON form of a config tree."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def content_hash(path) -> str:
    """sha256 hex digest of a file's raw bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
