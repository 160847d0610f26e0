"""Per-simulation random streams.

Every stream is named by ``(seed, client, sim, generation)`` and derived
through :class:`numpy.random.SeedSequence`, so streams never depend on
thread or network layout.  The streams themselves are ``random.Random``
instances, which are cheap to draw from one float at a time.
"""
from __future__ import annotations

import random

import numpy as np

__all__ = ["stream", "resample_stream", "server_stream", "repeat_seed", "SERVER", "RESAMPLE"]

# Reserved values for the ``sim`` slot of the spawn key.
SERVER = 2 ** 32 - 1
RESAMPLE = 2 ** 32 - 2


def _seed_int(seed: int, key: tuple) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    a, b = ss.generate_state(2, dtype=np.uint64)
    return (int(a) << 64) | int(b)


def stream(seed: int, client: int = 0, sim: int = 0, gen: int = 0) -> random.Random:
    """Stream of simulation ``sim`` on ``client`` after ``gen`` replacements."""
    return random.Random(_seed_int(seed, (client, sim, gen)))


def resample_stream(seed: int, client: int = 0) -> random.Random:
    """Stream a client uses to pick which of its successful states to send."""
    return random.Random(_seed_int(seed, (client, RESAMPLE, 0)))


def server_stream(seed: int) -> random.Random:
    """Stream the coordinator uses to pick donor clients."""
    return random.Random(_seed_int(seed, (0, SERVER, 0)))


def repeat_seed(seed: int, repeat: int) -> int:
    """Seed of the ``repeat``-th independent run of an experiment."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(repeat),))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1
