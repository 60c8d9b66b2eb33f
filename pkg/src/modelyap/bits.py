"""Fixed-width bit blocks and their packed numpy word representation.

A block of ``n`` bits is stored as ``ceil(n / 32)`` big-endian ``uint32``
words.  Widths below 32 occupy the low bits of a single word.  Bit index
``i`` (0-based) always means the ``i``-th most significant bit, and a cell
``(j, i)`` of a multi-block state flattens to ``j * n + i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

WORD_BITS = 32
WORD_MASK = 0xFFFFFFFF


class DimensionError(ValueError):
    """Raised when a block, key or state has the wrong width or shape."""


def n_words(width: int) -> int:
    return max(1, -(-width // WORD_BITS))


@dataclass(frozen=True)
class BitBlock:
    """An immutable ``width``-bit value, most significant bit first."""

    value: int
    width: int

    def __post_init__(self) -> None:
        if self.width < 1:
            raise DimensionError(f"width must be positive, got {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise DimensionError(f"value {self.value:#x} does not fit in {self.width} bits")

    @classmethod
    def from_hex(cls, text: str, width: int | None = None):
        text = text.strip().lower().removeprefix("0x")
        if width is None:
            width = 4 * len(text)
        return cls(int(text, 16), width)

    @classmethod
    def from_bits(cls, bits: str | Sequence[int]):
        if isinstance(bits, str):
            bits = [int(ch) for ch in bits if ch in "01"]
        value = 0
        for bit in bits:
            value = (value << 1) | (bit & 1)
        return cls(value, len(bits))

    @classmethod
    def zero(cls, width: int):
        return cls(0, width)

    def hex(self) -> str:
        return format(self.value, f"0{-(-self.width // 4)}x")

    def bits(self) -> str:
        return format(self.value, f"0{self.width}b")

    def bit(self, index: int) -> int:
        """Bit ``index`` counted from the most significant end (0-based)."""
        self._check_index(index)
        return (self.value >> (self.width - 1 - index)) & 1

    def flip(self, index: int):
        self._check_index(index)
        return type(self)(self.value ^ (1 << (self.width - 1 - index)), self.width)

    def weight(self) -> int:
        return bin(self.value).count("1")

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.width:
            raise DimensionError(f"bit index {index} outside [0, {self.width})")

    def __xor__(self, other: "BitBlock"):
        if not isinstance(other, BitBlock):
            return NotImplemented
        if other.width != self.width:
            raise DimensionError(f"cannot xor {self.width}-bit and {other.width}-bit blocks")
        return type(self)(self.value ^ other.value, self.width)

    def __str__(self) -> str:
        return self.hex() if self.width % 4 == 0 else self.bits()


class Key(BitBlock):
    """A cipher key; same representation as a block."""


def int_to_words(value: int, width: int) -> np.ndarray:
    w = n_words(width)
    return np.array(
        [(value >> (WORD_BITS * (w - 1 - k))) & WORD_MASK for k in range(w)], dtype=np.uint32
    )


def words_to_int(words: Iterable[int]) -> int:
    value = 0
    for word in words:
        value = (value << WORD_BITS) | int(word)
    return value


def blocks_to_array(blocks: Sequence[BitBlock], width: int) -> np.ndarray:
    for blk in blocks:
        if blk.width != width:
            raise DimensionError(f"expected {width}-bit block, got {blk.width}-bit")
    if not blocks:
        return np.zeros((0, n_words(width)), dtype=np.uint32)
    return np.stack([int_to_words(blk.value, width) for blk in blocks])


def array_to_blocks(arr: np.ndarray, width: int, cls=BitBlock) -> tuple:
    arr = np.asarray(arr).reshape(-1, n_words(width))
    return tuple(cls(words_to_int(row), width) for row in arr)


def width_mask(width: int) -> np.ndarray:
    """Per-word masks selecting the valid bits of a ``width``-bit block."""
    return int_to_words((1 << width) - 1, width)


def unpack_bits(words: np.ndarray, width: int) -> np.ndarray:
    """Expand ``(..., W)`` packed words into ``(..., width)`` uint8 bits, MSB first."""
    be = np.ascontiguousarray(words, dtype=">u4")
    bits = np.unpackbits(be.view(np.uint8), axis=-1)
    return bits[..., bits.shape[-1] - width:]


def pack_bits(bits: np.ndarray, width: int) -> np.ndarray:
    """Inverse of :func:`unpack_bits`."""
    bits = np.asarray(bits, dtype=np.uint8)
    pad = n_words(width) * WORD_BITS - width
    if pad:
        bits = np.concatenate(
            [np.zeros(bits.shape[:-1] + (pad,), dtype=np.uint8), bits], axis=-1
        )
    packed = np.packbits(bits, axis=-1)
    return packed.view(">u4").astype(np.uint32)


def cell_location(cell: int, width: int) -> tuple[int, int, int]:
    """Map a flattened cell index to ``(block, word, mask)`` in packed form."""
    block, bit = divmod(cell, width)
    pos = width - 1 - bit
    return block, n_words(width) - 1 - pos // WORD_BITS, 1 << (pos % WORD_BITS)


def popcount(words: np.ndarray) -> np.ndarray:
    """Number of set bits summed over the last (word) axis."""
    x = np.asarray(words, dtype=np.uint32)
    x = x - ((x >> 1) & 0x55555555)
    x = (x & 0x33333333) + ((x >> 2) & 0x33333333)
    x = (x + (x >> 4)) & 0x0F0F0F0F
    x = (x * np.uint32(0x01010101)) >> 24
    return x.sum(axis=-1, dtype=np.int64)
