"""Deliberately weak ciphers with enumerable truth tables, used as oracles."""
from __future__ import annotations

import numpy as np

from modelyap.ciphers.base import BlockCipher, split_words


class XorCipher(BlockCipher):
    """``E_K(x) = x xor K``: linear over GF(2), so a flipped bit stays put."""

    def encrypt(self, schedule, blocks):
        (x,) = split_words(blocks, 1)
        return (x ^ schedule[..., 0])[..., None]

    decrypt = encrypt


class PermutationCipher(BlockCipher):
    """``E_K(x) = pi(x xor K)`` for a fixed seeded bijection ``pi``."""

    def __init__(self, spec):
        super().__init__(spec)
        size = 1 << spec.block_bits
        if spec.seed is None:
            table = np.arange(size, dtype=np.uint32)
        else:
            table = np.random.default_rng(spec.seed).permutation(size).astype(np.uint32)
        self.table = table
        self.inverse = np.empty_like(table)
        self.inverse[table] = np.arange(size, dtype=np.uint32)

    def encrypt(self, schedule, blocks):
        (x,) = split_words(blocks, 1)
        return self.table[x ^ schedule[..., 0]][..., None]

    def decrypt(self, schedule, blocks):
        (y,) = split_words(blocks, 1)
        return (self.inverse[y] ^ schedule[..., 0])[..., None]
