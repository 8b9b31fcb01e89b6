"""Reproducible random-number substreams.

Every stochastic component of the package draws from a stream keyed by
(seed, index, domain).  Streams with distinct keys are statistically
independent, and the same key always reproduces the same draws, which is
what makes simulation replications parallelizable without losing
determinism.
"""
from __future__ import annotations

import numpy as np

# domain tags keep replication streams, restart streams, and fixed
# structural draws from ever colliding
DOMAIN_REPLICATION = 0
DOMAIN_RESTART = 1
DOMAIN_STRUCTURE = 2


def rng_stream(seed: int, index: int = 0, domain: int = DOMAIN_REPLICATION) -> np.random.Generator:
    """Return an independent, reproducible generator for (seed, index, domain)."""
    if index < 0:
        raise ValueError("stream index must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(domain), int(index)))
    return np.random.Generator(np.random.PCG64(ss))
