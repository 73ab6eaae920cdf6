"""Deterministic parallel random streams.

Every random draw in the package derives from a single 64-bit root seed via
counter-based Philox streams keyed by (root seed, stream id) with the trial
index placed in the counter block. Streams for distinct trials are disjoint
and independent of scheduling, so parallel and serial runs produce identical
results.
"""

from __future__ import annotations

import numpy as np

# Stable stream ids per subsystem. Never reuse or renumber: recorded results
# depend on them.
STREAMS = {
    "fields.sublinear": 1,
    "brackets.residual": 2,
    "density.pushforward": 3,
    "density.pullback": 4,
    "hormander.scan": 5,
    "hormander.select": 6,
    "reach.trial": 7,
    "reach.invariance": 8,
    "steer.restart": 9,
    "suite": 10,
}


def stream(root_seed: int, stream_id: int | str, trial: int = 0) -> np.random.Generator:
    """Generator for (seed, stream, trial); disjoint 2^128-draw blocks."""
    if isinstance(stream_id, str):
        stream_id = STREAMS[stream_id]
    key = np.array([root_seed & 0xFFFFFFFFFFFFFFFF, stream_id], dtype=np.uint64)
    counter = np.array([0, 0, trial & 0xFFFFFFFFFFFFFFFF, trial >> 64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def uniform_in_box(gen: np.random.Generator, box_min, box_max, n: int) -> np.ndarray:
    """n uniform samples in the axis-aligned box; shape (n, d)."""
    lo = np.asarray(box_min, dtype=float)
    hi = np.asarray(box_max, dtype=float)
    return lo + gen.random((n, lo.size)) * (hi - lo)


def uniform_in_ball(gen: np.random.Generator, center, radius: float, n: int) -> np.ndarray:
    """n uniform samples in the Euclidean ball; fixed draw count per sample."""
    c = np.asarray(center, dtype=float)
    d = c.size
    z = gen.standard_normal((n, d))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    r = radius * gen.random(n) ** (1.0 / d)
    return c + z / norms * r[:, None]
