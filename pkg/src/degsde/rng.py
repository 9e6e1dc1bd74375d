"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, purpose, index)``; the
Philox counter then walks through the steps of that stream.  A path's normals
are therefore a function of the seed, the path index and the step index only,
never of which worker simulated it or in what order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

PATHS = 0
PERMUTATIONS = 1
SUBSAMPLE = 2


def stream(seed: int, index: int, purpose: int = PATHS) -> np.random.Generator:
    if index < 0 or index >= 1 << 56:
        raise ValueError(f"stream index out of range: {index}")
    key = np.array([seed & MASK64, (purpose << 56) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def path_streams(seed: int, start: int, stop: int) -> list[np.random.Generator]:
    return [stream(seed, i, PATHS) for i in range(start, stop)]


def draw_normals(gens: list[np.random.Generator], n_steps: int, d: int) -> np.ndarray:
    """Next ``n_steps`` standard normal d-vectors from each stream, shape ``(len(gens), n_steps, d)``."""
    out = np.empty((len(gens), n_steps, d))
    for i, g in enumerate(gens):
        g.standard_normal(out=out[i])
    return out
