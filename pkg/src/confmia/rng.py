"""Seed derivation and generator construction.

All randomness comes from numpy's Philox4x64 counter-based bit generator,
keyed by a 64-bit seed. Independent streams are derived with a splitmix64
mix of ``(seed, stream)`` so that no component ever touches global RNG state
and per-model streams do not depend on training order.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# stream ids for pipeline-level derivation
STREAM_MASK = 0x4D41534B
STREAM_MODEL = 0x4D4F444C


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed, *streams):
    """Fold stream identifiers into ``seed``; pure and order-sensitive."""
    h = splitmix64(int(seed) & _MASK64)
    for s in streams:
        h = splitmix64(h ^ (int(s) & _MASK64))
    return h


def generator(seed):
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))
