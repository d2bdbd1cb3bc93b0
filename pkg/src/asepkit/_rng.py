import numpy as np


def as_generator(rng):
    """Accept a Generator, SeedSequence, int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(rng))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(rng)))


def replica_streams(seed, n):
    """Independent counter-based streams, one per replica."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]
