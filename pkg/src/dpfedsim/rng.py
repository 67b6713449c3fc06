"""Counter-based random streams for reproducible parallel simulation.

Every source of randomness in the simulator is a pure function of a derived
stream key, never of call order.  Keys are built from integer labels such as
(seed, stream tag, client id, round, epoch, batch) and fed to a Philox
counter-based generator, so concurrently simulated clients draw from disjoint
streams and a run is bit-reproducible regardless of scheduling.

Gaussian variates are produced by an explicit Box-Muller transform over
Philox uniforms rather than the generator's built-in ziggurat sampler, which
pins the exact output sequence to this module instead of the numpy version.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep unrelated consumers of the same base seed apart.
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_NOISE = 3
STREAM_SELECT = 4
STREAM_PARTITION = 5
STREAM_CLIENT = 6
STREAM_PUBLIC_SPLIT = 7
STREAM_DATASET = 8
STREAM_SWEEP = 9
STREAM_POISSON = 10

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: int) -> int:
    """Collapse a tuple of integer labels into a 128-bit stream key.

    The mapping is stable across processes and platforms (it relies on
    numpy's SeedSequence hashing, which is specified and versioned).
    Distinct label tuples give independent streams with overwhelming
    probability.
    """
    entropy = tuple(int(p) & _MASK64 for p in parts)
    ss = np.random.SeedSequence(entropy)
    words = ss.generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def generator(key: int) -> np.random.Generator:
    """Philox generator positioned at the start of stream ``key``."""
    return np.random.Generator(np.random.Philox(key=key))


def standard_normal(key: int, n: int) -> np.ndarray:
    """Draw ``n`` iid standard normals from stream ``key`` via Box-Muller.

    Uses u1 mapped to (0, 1] so the log never sees zero.
    """
    if n == 0:
        return np.zeros(0)
    pairs = (n + 1) // 2
    u = generator(key).random((2, pairs))
    r = np.sqrt(-2.0 * np.log1p(-u[0]))
    theta = 2.0 * np.pi * u[1]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
    return z[:n]
