"""Deterministic seed plumbing.

Every random stream in a run is derived from one master seed plus a role tag
and integer indices, via :class:`numpy.random.SeedSequence` spawn keys::

    derive_rng(seed, "channel", t)        # channel draw for round t
    derive_rng(seed, "local", t, k)       # local SGD of device k in round t

The role tag is hashed with CRC32 so the mapping is stable across processes
and Python versions.
"""

from __future__ import annotations

import zlib

import numpy as np


def role_key(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def derive_seed_sequence(seed: int, role: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(role_key(role), *map(int, index)))


def derive_rng(seed: int, role: str, *index: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, role, *index)``."""
    return np.random.default_rng(derive_seed_sequence(seed, role, *index))


def derive_int(seed: int, role: str, *index: int) -> int:
    """Derive a 63-bit integer seed, for APIs that take plain ints."""
    return int(derive_seed_sequence(seed, role, *index).generate_state(1, np.uint64)[0] >> 1)
