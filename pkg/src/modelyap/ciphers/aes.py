"""AES-128 with 32-bit lookup tables, vectorised over numpy arrays.

Blocks are four big-endian column words.  The S-box and round tables are
derived at import time from the GF(2^8) arithmetic rather than typed in.
"""
from __future__ import annotations

import numpy as np

from modelyap.ciphers.base import BlockCipher, split_words


def _xtime(a: int) -> int:
    a <<= 1
    return (a ^ 0x11B) if a & 0x100 else a


def _gmul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a = _xtime(a)
        b >>= 1
    return out


def _build_sbox() -> list[int]:
    # 3 generates the multiplicative group, so inverses come from exp/log tables
    exp, log = [0] * 255, [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _gmul(x, 3)
    inv = [0] + [exp[(255 - log[a]) % 255] for a in range(1, 256)]
    sbox = []
    for a in range(256):
        x = inv[a]
        y = x
        for _ in range(4):
            x = ((x << 1) | (x >> 7)) & 0xFF
            y ^= x
        sbox.append(y ^ 0x63)
    return sbox


SBOX = _build_sbox()
INV_SBOX = [0] * 256
for _i, _s in enumerate(SBOX):
    INV_SBOX[_s] = _i


def _ror(word: int, bits: int) -> int:
    return ((word >> bits) | (word << (32 - bits))) & 0xFFFFFFFF


def _tables(columns) -> np.ndarray:
    t0 = [columns(x) for x in range(256)]
    return np.array([[_ror(w, 8 * r) for w in t0] for r in range(4)], dtype=np.uint32)


TE = _tables(
    lambda x: (_gmul(SBOX[x], 2) << 24) | (SBOX[x] << 16) | (SBOX[x] << 8) | _gmul(SBOX[x], 3)
)
TD = _tables(
    lambda x: (_gmul(INV_SBOX[x], 14) << 24)
    | (_gmul(INV_SBOX[x], 9) << 16)
    | (_gmul(INV_SBOX[x], 13) << 8)
    | _gmul(INV_SBOX[x], 11)
)
S_ARR = np.array(SBOX, dtype=np.uint32)
INV_S_ARR = np.array(INV_SBOX, dtype=np.uint32)
RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36, 0x6C, 0xD8, 0xAB, 0x4D]


def _sub_word(w: np.ndarray) -> np.ndarray:
    return (
        (S_ARR[w >> 24] << 24)
        | (S_ARR[(w >> 16) & 0xFF] << 16)
        | (S_ARR[(w >> 8) & 0xFF] << 8)
        | S_ARR[w & 0xFF]
    )


def _inv_mix_word(w: np.ndarray) -> np.ndarray:
    return (
        TD[0][S_ARR[w >> 24]]
        ^ TD[1][S_ARR[(w >> 16) & 0xFF]]
        ^ TD[2][S_ARR[(w >> 8) & 0xFF]]
        ^ TD[3][S_ARR[w & 0xFF]]
    )


class AES128(BlockCipher):
    """AES with a 128-bit key; ``rounds`` may be reduced below 10."""

    def _schedule(self, key):
        nr = self.spec.rounds
        if nr > len(RCON):
            raise ValueError(f"at most {len(RCON)} rounds supported")
        w = [key[..., i] for i in range(4)]
        for i in range(4, 4 * (nr + 1)):
            tmp = w[i - 1]
            if i % 4 == 0:
                tmp = _sub_word((tmp << 8) | (tmp >> 24)) ^ np.uint32(RCON[i // 4 - 1] << 24)
            w.append(w[i - 4] ^ tmp)
        enc = np.stack(w, axis=-1)
        # equivalent inverse cipher: reversed round keys, InvMixColumns on the inner ones
        dec = [w[4 * nr + c] for c in range(4)]
        for r in range(nr - 1, 0, -1):
            dec.extend(_inv_mix_word(w[4 * r + c]) for c in range(4))
        dec.extend(w[c] for c in range(4))
        return np.concatenate([enc, np.stack(dec, axis=-1)], axis=-1)

    def encrypt(self, schedule, blocks):
        nr = self.spec.rounds
        rk = schedule[..., : 4 * (nr + 1)]
        s = [x ^ rk[..., c] for c, x in enumerate(split_words(blocks, 4))]
        t0, t1, t2, t3 = TE
        for r in range(1, nr):
            s = [
                t0[s[c] >> 24]
                ^ t1[(s[(c + 1) % 4] >> 16) & 0xFF]
                ^ t2[(s[(c + 2) % 4] >> 8) & 0xFF]
                ^ t3[s[(c + 3) % 4] & 0xFF]
                ^ rk[..., 4 * r + c]
                for c in range(4)
            ]
        out = [
            (
                (S_ARR[s[c] >> 24] << 24)
                | (S_ARR[(s[(c + 1) % 4] >> 16) & 0xFF] << 16)
                | (S_ARR[(s[(c + 2) % 4] >> 8) & 0xFF] << 8)
                | S_ARR[s[(c + 3) % 4] & 0xFF]
            )
            ^ rk[..., 4 * nr + c]
            for c in range(4)
        ]
        return np.stack(np.broadcast_arrays(*out), axis=-1)

    def decrypt(self, schedule, blocks):
        nr = self.spec.rounds
        rk = schedule[..., 4 * (nr + 1):]
        s = [x ^ rk[..., c] for c, x in enumerate(split_words(blocks, 4))]
        d0, d1, d2, d3 = TD
        for r in range(1, nr):
            s = [
                d0[s[c] >> 24]
                ^ d1[(s[(c + 3) % 4] >> 16) & 0xFF]
                ^ d2[(s[(c + 2) % 4] >> 8) & 0xFF]
                ^ d3[s[(c + 1) % 4] & 0xFF]
                ^ rk[..., 4 * r + c]
                for c in range(4)
            ]
        out = [
            (
                (INV_S_ARR[s[c] >> 24] << 24)
                | (INV_S_ARR[(s[(c + 3) % 4] >> 16) & 0xFF] << 16)
                | (INV_S_ARR[(s[(c + 2) % 4] >> 8) & 0xFF] << 8)
                | INV_S_ARR[s[(c + 1) % 4] & 0xFF]
            )
            ^ rk[..., 4 * nr + c]
            for c in range(4)
        ]
        return np.stack(np.broadcast_arrays(*out), axis=-1)
