"""Deterministic randomness for the whole pipeline.

Every component draws from a `Rng` obtained by deriving a labelled child
seed from a parent seed. With a fixed root seed (e.g. from PRS_SEED) all
key material, masks, garbling labels and clustering decisions are
reproducible byte-for-byte; without one, the root comes from os.urandom.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

SEED_BYTES = 32


def root_seed(seed: int | bytes | None = None) -> bytes:
    """Build a 32-byte root seed from an int, raw bytes, or the OS."""
    if seed is None:
        return os.urandom(SEED_BYTES)
    if isinstance(seed, int):
        return hashlib.blake2b(seed.to_bytes(16, "little", signed=False),
                               digest_size=SEED_BYTES).digest()
    return hashlib.blake2b(bytes(seed), digest_size=SEED_BYTES).digest()


def derive(seed: bytes, *labels: object) -> bytes:
    """Derive a child seed; labels may be strings or ints."""
    h = hashlib.blake2b(seed, digest_size=SEED_BYTES)
    for lab in labels:
        if isinstance(lab, int):
            h.update(b"\x00i" + lab.to_bytes(16, "little", signed=True))
        else:
            h.update(b"\x00s" + str(lab).encode())
    return h.digest()


class Rng:
    """numpy Philox stream plus a few convenience draws.

    Philox output is platform-independent, which keeps transcripts
    byte-identical across machines for a fixed seed.
    """

    def __init__(self, seed: bytes):
        self.seed = seed
        key = int.from_bytes(seed[:16], "little")
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels: object) -> "Rng":
        return Rng(derive(self.seed, *labels))

    def bytes(self, n: int) -> bytes:
        return self._gen.bytes(n)

    def u8(self, shape) -> np.ndarray:
        return self._gen.integers(0, 256, size=shape, dtype=np.uint8)

    def u16(self, shape) -> np.ndarray:
        return self._gen.integers(0, 1 << 16, size=shape, dtype=np.uint16)

    def u64(self, shape) -> np.ndarray:
        return self._gen.integers(0, 1 << 63, size=shape, dtype=np.uint64)

    def bits(self, n: int) -> np.ndarray:
        return self._gen.integers(0, 2, size=n, dtype=np.uint8)

    def below(self, bound: int, shape=None):
        return self._gen.integers(0, bound, size=shape)

    def shuffle(self, arr: np.ndarray) -> None:
        self._gen.shuffle(arr)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def normal(self, scale: float, shape) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def laplace(self, scale: float, shape) -> np.ndarray:
        return self._gen.laplace(0.0, scale, size=shape)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


def from_env(default: int | None = None) -> Rng:
    """Root Rng honouring the PRS_SEED environment variable."""
    env = os.environ.get("PRS_SEED")
    if env is not None:
        return Rng(root_seed(int(env, 0)))
    if default is not None:
        return Rng(root_seed(default))
    return Rng(root_seed(None))
