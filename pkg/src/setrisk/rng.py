"""Deterministic, splittable random streams.

Every stochastic choice in the package draws from a stream derived from
(seed, *labels) via a counter-based Philox generator keyed by a hash of
the labels. Streams are independent of each other and of the order in
which they are created, so sampling stays reproducible across runs,
resumes, and worker counts.
"""

import hashlib

import numpy as np


def stream(seed, *labels):
    """Return a ``numpy.random.Generator`` for the given (seed, labels) key.

    ``labels`` may be ints or strings; the same key always yields a
    generator producing the identical draw sequence.
    """
    material = repr((int(seed),) + tuple(labels)).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
