"""Small shared helpers: worker caps, seeding, hashing."""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np


def fft_workers() -> int:
    """Worker count for FFTs and sample pools, capped by ``SHL_THREADS``."""
    try:
        return max(1, int(os.environ.get("SHL_THREADS", "1")))
    except ValueError:
        return 1


def sample_rng(base_seed: int, *key: int) -> np.random.Generator:
    """Counter-based stream for ``(base_seed, key...)``; independent of call order."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def split_seed(base_seed: int, index: int) -> int:
    """Derived per-sample seed; ``split(base_seed, index)``."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def canonical_hash(obj) -> str:
    """Digest of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays for ``json.dump``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.generic, np.ndarray)):
        return _jsonable(obj)
    return obj
