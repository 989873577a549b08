"""One global seed fanned out to per-component seeds by labeled hashing."""
from __future__ import annotations

import hashlib


def derive_seed(seed: int, *labels: object) -> int:
    text = ":".join([str(seed), *map(str, labels)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")
