"""Deterministic seeding helpers.

Per-example and per-value seeds are derived with sha256 rather than hash()
so that output is stable across interpreter runs and PYTHONHASHSEED.
"""

from __future__ import annotations

import hashlib
import math
import random


def stable_seed(*parts: object) -> int:
    """64-bit seed derived from the string forms of the parts."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def draw_value(lo: float, hi: float, seed: int) -> float:
    """Log-uniform draw from [lo, hi], rounded to two decimals."""
    if not (0 < lo <= hi):
        raise ValueError(f"bad range ({lo}, {hi}); bounds must be positive")
    rng = random.Random(seed)
    return round(math.exp(rng.uniform(math.log(lo), math.log(hi))), 2)
