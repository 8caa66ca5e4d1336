"""Seeded, splittable random streams.

Every random draw in the package comes from a Philox (counter-based) generator
keyed by a base seed plus a path of stream names, so independent stages never
share a stream and results do not depend on call order between stages.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    """Generator for the named sub-stream ``path`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def get_state(rng: np.random.Generator) -> dict:
    """JSON-serializable bit-generator state."""
    return _jsonable(rng.bit_generator.state)


def set_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = _restore(state)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _restore(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _restore(v) for k, v in obj.items()}
    return obj
