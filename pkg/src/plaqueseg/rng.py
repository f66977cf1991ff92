"""Seeded, splittable random streams.

Every random draw in the package comes from a Philox4x64-10 counter-based
generator (Salmon et al., SC'11) keyed by ``(seed, stream)``:

* ``key[0] = seed mod 2**64``
* ``key[1] = int.from_bytes(blake2b("/".join(path), digest_size=8), "little")``
  where ``path`` is the stream name, e.g. ``("phantom", 7)`` -> ``"phantom/7"``
* the 256-bit counter starts at zero and is incremented before each
  block, so the first four outputs come from counter 1.

Raw 64-bit outputs are therefore reproducible in any language that has
Philox and BLAKE2b; the golden vectors in the test suite pin them. Uniform
doubles are ``(raw >> 11) * 2**-53``. Non-uniform samplers (normal, gamma)
are numpy's and are only guaranteed to repeat within numpy.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def stream_key(seed: int, *path) -> tuple[int, int]:
    name = "/".join(str(p) for p in path).encode("utf-8")
    tag = int.from_bytes(hashlib.blake2b(name, digest_size=8).digest(), "little")
    return int(seed) & MASK64, tag


def bit_generator(seed: int, *path) -> np.random.Philox:
    k0, k1 = stream_key(seed, *path)
    return np.random.Philox(key=np.array([k0, k1], dtype=np.uint64))


def generator(seed: int, *path) -> np.random.Generator:
    """Independent stream for ``(seed, path)``."""
    return np.random.Generator(bit_generator(seed, *path))


def raw_sequence(seed: int, n: int, *path) -> list[int]:
    return [int(v) for v in bit_generator(seed, *path).random_raw(n)]


def uniform_sequence(seed: int, n: int, *path) -> list[float]:
    return [(v >> 11) * 2.0 ** -53 for v in raw_sequence(seed, n, *path)]
