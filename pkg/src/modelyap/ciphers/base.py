"""Cipher abstraction shared by every block cipher implementation.

Implementations work on packed ``uint32`` word arrays (see :mod:`modelyap.bits`)
and broadcast a key schedule of shape ``(..., S)`` against blocks of shape
``(..., W)``, so one call can encrypt many blocks under many keys.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from modelyap.bits import DimensionError, n_words


class UnsupportedCipherError(ValueError):
    pass


@dataclass(frozen=True)
class CipherSpec:
    """Identity and parameters of a block cipher.

    ``seed`` only matters for the fixed-permutation toy cipher: it selects the
    permutation, and ``None`` selects the identity permutation.
    """

    id: str
    block_bits: int
    key_bits: int
    rounds: int
    seed: int | None = None

    @property
    def family(self) -> str:
        return f"{self.block_bits}-bit"

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "block_bits": self.block_bits,
            "key_bits": self.key_bits,
            "rounds": self.rounds,
            "seed": self.seed,
        }


class BlockCipher:
    """A block cipher bound to a :class:`CipherSpec` but not to a key."""

    block_bits: int
    key_bits: int

    def __init__(self, spec: CipherSpec):
        if spec.rounds < 1:
            raise ValueError(f"rounds must be positive, got {spec.rounds}")
        self.spec = spec
        self.block_bits = spec.block_bits
        self.key_bits = spec.key_bits
        self.block_words = n_words(spec.block_bits)
        self.key_words = n_words(spec.key_bits)

    def schedule(self, key: np.ndarray) -> np.ndarray:
        """Expand packed key words ``(..., key_words)`` into a schedule."""
        key = np.asarray(key, dtype=np.uint32)
        if key.shape[-1] != self.key_words:
            raise DimensionError(f"{self.spec.id} expects {self.key_words} key words")
        return self._schedule(key)

    def _schedule(self, key: np.ndarray) -> np.ndarray:
        return key

    def encrypt(self, schedule: np.ndarray, blocks: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decrypt(self, schedule: np.ndarray, blocks: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def weak_keys(self) -> frozenset[int]:
        """Keys that dataset generation must reject (none by default)."""
        return frozenset()


def split_words(blocks: np.ndarray, count: int) -> list[np.ndarray]:
    blocks = np.asarray(blocks, dtype=np.uint32)
    if blocks.shape[-1] != count:
        raise DimensionError(f"expected {count} words per block, got {blocks.shape[-1]}")
    return [blocks[..., k] for k in range(count)]
