"""Named random streams derived from one experiment seed.

Each consumer (data, init, batching, kmeans) draws from its own stream so
that changing how much one component consumes leaves the others intact.
"""
import zlib

import numpy as np

STREAMS = ("data", "init", "batching", "kmeans")


def stream(seed, name):
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


def stream_seed(seed, name):
    """Integer seed for APIs that take one (e.g. the synthetic generator)."""
    return int(stream(seed, name).integers(2**63 - 1))
