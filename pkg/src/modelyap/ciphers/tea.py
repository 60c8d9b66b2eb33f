"""TEA and XTEA on 64-bit blocks with 128-bit keys, vectorised over numpy arrays.

``rounds`` counts cycles (each cycle is two Feistel rounds); the published
parameterisation is 32 cycles for both ciphers.
"""
from __future__ import annotations

import numpy as np

from modelyap.ciphers.base import BlockCipher, split_words

DELTA = 0x9E3779B9
MASK = 0xFFFFFFFF


def _u32(value: int) -> np.uint32:
    return np.uint32(value & MASK)


class TEA(BlockCipher):
    def encrypt(self, schedule, blocks):
        v0, v1 = (w.copy() for w in split_words(blocks, 2))
        k0, k1, k2, k3 = split_words(schedule, 4)
        total = 0
        for _ in range(self.spec.rounds):
            total = (total + DELTA) & MASK
            s = _u32(total)
            v0 = v0 + (((v1 << 4) + k0) ^ (v1 + s) ^ ((v1 >> 5) + k1))
            v1 = v1 + (((v0 << 4) + k2) ^ (v0 + s) ^ ((v0 >> 5) + k3))
        return np.stack(np.broadcast_arrays(v0, v1), axis=-1)

    def decrypt(self, schedule, blocks):
        v0, v1 = (w.copy() for w in split_words(blocks, 2))
        k0, k1, k2, k3 = split_words(schedule, 4)
        total = (DELTA * self.spec.rounds) & MASK
        for _ in range(self.spec.rounds):
            s = _u32(total)
            v1 = v1 - (((v0 << 4) + k2) ^ (v0 + s) ^ ((v0 >> 5) + k3))
            v0 = v0 - (((v1 << 4) + k0) ^ (v1 + s) ^ ((v1 >> 5) + k1))
            total = (total - DELTA) & MASK
        return np.stack(np.broadcast_arrays(v0, v1), axis=-1)


class XTEA(BlockCipher):
    def encrypt(self, schedule, blocks):
        v0, v1 = (w.copy() for w in split_words(blocks, 2))
        k = split_words(schedule, 4)
        total = 0
        for _ in range(self.spec.rounds):
            v0 = v0 + ((((v1 << 4) ^ (v1 >> 5)) + v1) ^ (_u32(total) + k[total & 3]))
            total = (total + DELTA) & MASK
            v1 = v1 + ((((v0 << 4) ^ (v0 >> 5)) + v0) ^ (_u32(total) + k[(total >> 11) & 3]))
        return np.stack(np.broadcast_arrays(v0, v1), axis=-1)

    def decrypt(self, schedule, blocks):
        v0, v1 = (w.copy() for w in split_words(blocks, 2))
        k = split_words(schedule, 4)
        total = (DELTA * self.spec.rounds) & MASK
        for _ in range(self.spec.rounds):
            v1 = v1 - ((((v0 << 4) ^ (v0 >> 5)) + v0) ^ (_u32(total) + k[(total >> 11) & 3]))
            total = (total - DELTA) & MASK
            v0 = v0 - ((((v1 << 4) ^ (v1 >> 5)) + v1) ^ (_u32(total) + k[total & 3]))
        return np.stack(np.broadcast_arrays(v0, v1), axis=-1)
