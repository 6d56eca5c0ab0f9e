"""Seeded random streams.

Every random draw in the package comes from a Philox counter-based generator
whose key is derived from ``(master_seed, *stream_id)`` through
:class:`numpy.random.SeedSequence`. Disjoint stream ids give independent
substreams, so replications can be generated in any order or in parallel.
"""
from __future__ import annotations

import numpy as np

GENERATOR_NAME = "numpy.random.Philox (SeedSequence-keyed)"

# Stream-id namespaces, so the same integer never feeds two purposes.
PATHS = 1
MUSF = 2
SAMPLES = 3


def substream(master_seed: int, *stream_id: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.Philox(seq))


def generator_identity() -> str:
    return f"{GENERATOR_NAME}; numpy {np.__version__}"
