"""FNV-1a checksums and seed derivation.

All binary artifacts end with a 64-bit FNV-1a checksum over every byte that
precedes it; text manifests embed the same hash of their body. Sub-stage RNG
seeds are derived from the global seed by hashing the stage name, so a single
seed reproduces the whole pipeline while stages stay independently rerunnable.
"""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a64_py(data: np.ndarray) -> int:
    h = FNV_OFFSET
    for b in data.tolist():
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


try:
    from numba import njit

    @njit(cache=True)
    def _fnv1a64_nb(data):  # pragma: no cover - thin JIT wrapper
        h = np.uint64(FNV_OFFSET)
        p = np.uint64(FNV_PRIME)
        for i in range(data.size):
            h = (h ^ np.uint64(data[i])) * p
        return h

    def _fnv1a64_arr(data: np.ndarray) -> int:
        return int(_fnv1a64_nb(data))

except ImportError:  # pragma: no cover - numba is a hard dep, kept defensive
    _fnv1a64_arr = _fnv1a64_py


def fnv1a64(data: bytes | bytearray | memoryview | np.ndarray) -> int:
    """64-bit FNV-1a hash of a byte sequence."""
    arr = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    if arr.dtype != np.uint8:
        arr = arr.view(np.uint8)
    if arr.size < 1024:
        return _fnv1a64_py(arr)
    return _fnv1a64_arr(np.ascontiguousarray(arr))


def derive_seed(seed: int, *tags: str | int) -> int:
    """Deterministic sub-seed from a global seed and stage tags.

    Hashes the tag path with FNV-1a and folds the seed in, yielding a
    non-negative 63-bit integer usable directly as an RNG seed.
    """
    h = FNV_OFFSET
    payload = int(seed).to_bytes(8, "little", signed=True)
    for tag in tags:
        payload += b"/" + str(tag).encode("utf-8")
    for b in payload:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h >> 1
