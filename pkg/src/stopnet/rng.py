"""Seeded random streams.

All randomness derives from one integer seed. A stream is identified by a
text label; the label is hashed with SHA-256 and mixed into a numpy
``SeedSequence`` so streams are independent and stable across runs and
platforms. The generator is numpy's PCG64.
"""

import hashlib

import numpy as np


def _label_words(label):
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(seed, label):
    """Return a ``numpy.random.Generator`` for ``(seed, label)``."""
    if seed is None:
        raise ValueError("seed is required")
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *_label_words(label)])
    return np.random.Generator(np.random.PCG64(ss))
