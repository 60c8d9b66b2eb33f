"""Block ciphers: the mandatory TEA, XTEA and AES-128 plus toy oracle ciphers.

Additional ciphers plug in with :func:`register_cipher`.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

from modelyap.bits import BitBlock, DimensionError, Key, int_to_words, words_to_int
from modelyap.ciphers.aes import AES128
from modelyap.ciphers.base import BlockCipher, CipherSpec, UnsupportedCipherError
from modelyap.ciphers.tea import TEA, XTEA
from modelyap.ciphers.toy import PermutationCipher, XorCipher

__all__ = [
    "BlockCipher",
    "CipherSpec",
    "UnsupportedCipherError",
    "cipher_spec",
    "decrypt_block",
    "encrypt_block",
    "get_cipher",
    "register_cipher",
    "toy_cipher",
]

_REGISTRY: dict[str, Callable[[CipherSpec], BlockCipher]] = {
    "tea": TEA,
    "xtea": XTEA,
    "aes": AES128,
    "toy-xor": XorCipher,
    "toy-perm": PermutationCipher,
}

# (block_bits, key_bits, rounds)
DEFAULTS = {
    "tea": (64, 128, 32),
    "xtea": (64, 128, 32),
    "aes": (128, 128, 10),
}

MANDATORY = ("tea", "xtea", "aes")


def register_cipher(
    cipher_id: str,
    factory: Callable[[CipherSpec], BlockCipher],
    block_bits: int,
    key_bits: int,
    rounds: int,
) -> None:
    _REGISTRY[cipher_id] = factory
    DEFAULTS[cipher_id] = (block_bits, key_bits, rounds)
    get_cipher.cache_clear()


def cipher_spec(cipher_id: str, rounds: int | None = None) -> CipherSpec:
    """Spec with the default parameters of a registered real cipher."""
    cipher_id = cipher_id.lower()
    if cipher_id not in DEFAULTS:
        raise UnsupportedCipherError(f"unknown cipher {cipher_id!r}")
    block_bits, key_bits, default_rounds = DEFAULTS[cipher_id]
    return CipherSpec(cipher_id, block_bits, key_bits, rounds or default_rounds)


def toy_cipher(kind: str, n: int, seed: int | None = 0) -> CipherSpec:
    """A toy cipher on ``n``-bit blocks with an ``n``-bit key.

    ``kind`` is ``"xor"`` or ``"fixed-permutation"``; for the latter ``seed``
    picks the permutation (``None`` gives the identity).
    """
    if not 4 <= n <= 16:
        raise DimensionError(f"toy cipher width must be in [4, 16], got {n}")
    if kind == "xor":
        return CipherSpec("toy-xor", n, n, 1)
    if kind in ("fixed-permutation", "perm"):
        return CipherSpec("toy-perm", n, n, 1, seed=seed)
    raise UnsupportedCipherError(f"unknown toy cipher kind {kind!r}")


@lru_cache(maxsize=None)
def get_cipher(spec: CipherSpec) -> BlockCipher:
    try:
        factory = _REGISTRY[spec.id]
    except KeyError:
        raise UnsupportedCipherError(f"unknown cipher {spec.id!r}") from None
    if spec.id in DEFAULTS:
        block_bits, key_bits, _ = DEFAULTS[spec.id]
        if (spec.block_bits, spec.key_bits) != (block_bits, key_bits):
            raise DimensionError(f"{spec.id} is a {block_bits}-bit block / {key_bits}-bit key cipher")
    return factory(spec)


def _check(spec: CipherSpec, key: Key, block: BitBlock) -> None:
    if block.width != spec.block_bits:
        raise DimensionError(f"{spec.id} expects {spec.block_bits}-bit blocks, got {block.width}")
    if key.width != spec.key_bits:
        raise DimensionError(f"{spec.id} expects {spec.key_bits}-bit keys, got {key.width}")


def encrypt_block(spec: CipherSpec, key: Key, block: BitBlock) -> BitBlock:
    cipher = get_cipher(spec)
    _check(spec, key, block)
    sched = cipher.schedule(int_to_words(key.value, key.width)[None])
    out = cipher.encrypt(sched, int_to_words(block.value, block.width)[None])
    return BitBlock(words_to_int(np.asarray(out).ravel()), spec.block_bits)


def decrypt_block(spec: CipherSpec, key: Key, block: BitBlock) -> BitBlock:
    cipher = get_cipher(spec)
    _check(spec, key, block)
    sched = cipher.schedule(int_to_words(key.value, key.width)[None])
    out = cipher.decrypt(sched, int_to_words(block.value, block.width)[None])
    return BitBlock(words_to_int(np.asarray(out).ravel()), spec.block_bits)
