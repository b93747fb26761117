"""Deterministic random streams.

Every stream is derived from one 64-bit master seed plus a label and a
tuple of integer indices, so results never depend on execution order or
on how work is split between processes.
"""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, label: str, *indices) -> int:
    """Hash ``(seed, label, indices)`` into a 64-bit integer."""
    payload = repr((int(seed) & MASK64, str(label), tuple(_canon(i) for i in indices)))
    digest = hashlib.blake2b(payload.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, label: str, *indices) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, label, *indices)))


def _canon(value):
    # floats are keyed by their exact bit pattern so 0.1 and 0.1000000001 differ
    if isinstance(value, float):
        return ("f", float(value).hex())
    return int(value)
