from __future__ import annotations

import hashlib
import json
import math
import zlib
from datetime import datetime, timezone
from typing import Any, Optional

import numpy as np


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def sha256_text(s: str) -> str:
    return sha256_bytes(s.encode("utf-8"))


def json_dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), sort_keys=True)


def json_loads(s: str) -> Any:
    return json.loads(s)


def format_float(v: Optional[float]) -> str:
    # repr round-trips float64 exactly; None/NaN become empty cells
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def parse_float(s: str) -> Optional[float]:
    s = s.strip()
    return float(s) if s else None


def relative_change(before: float, after: float) -> float:
    return abs(after - before) / max(abs(before), 1e-12)


# ---------------------------------------------------------------------
# Seeded RNG streams
# ---------------------------------------------------------------------
def purpose_tag(name: str) -> int:
    """Stable integer tag for a stream purpose (crc32, not Python's salted hash)."""
    return zlib.crc32(name.encode("utf-8"))


def rng_stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    ss = np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=(purpose_tag(purpose),) + tuple(int(i) for i in indices),
    )
    return np.random.Generator(np.random.PCG64(ss))


class RngStreams:
    """Streams for one training step: a root stream plus one per rollout group.

    Every stream is a pure function of (seed, purpose, indices[, group]) so the
    sample for group g never depends on how many other groups were drawn.
    """

    def __init__(self, seed: int, purpose: str, *indices: int):
        self.seed = int(seed)
        self.purpose = purpose
        self.indices = tuple(int(i) for i in indices)
        self.root = rng_stream(self.seed, purpose, *self.indices)

    def group(self, g: int) -> np.random.Generator:
        return rng_stream(self.seed, self.purpose + "/group", *self.indices, int(g))
