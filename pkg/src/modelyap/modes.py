"""Modes of operation as maps on multi-block states, and their iteration.

The vectorised core (:func:`encrypt_blocks` / :func:`decrypt_blocks`) works on
packed word arrays ``(..., b, W)`` with an IV ``(..., W)``; the
:class:`SystemState` API wraps it for single trajectories.

Iterating a mode feeds the last ciphertext block back in as the next IV, and
for CTR the counter base is that IV as well.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from modelyap.bits import (
    WORD_BITS,
    WORD_MASK,
    BitBlock,
    DimensionError,
    Key,
    array_to_blocks,
    blocks_to_array,
    int_to_words,
    width_mask,
)
from modelyap.ciphers import BlockCipher, CipherSpec, get_cipher


class ModeId(str, enum.Enum):
    ECB = "ECB"
    CBC = "CBC"
    OFB = "OFB"
    CFB = "CFB"
    CTR = "CTR"
    PCBC = "PCBC"

    @classmethod
    def parse(cls, name: "str | ModeId") -> "ModeId":
        try:
            return cls(str(getattr(name, "value", name)).upper())
        except ValueError:
            raise ValueError(f"unknown mode {name!r}; expected one of {[m.value for m in cls]}") from None


ALL_MODES = tuple(ModeId)


def add_counter(base: np.ndarray, offsets: np.ndarray, width: int) -> np.ndarray:
    """``(base + offset) mod 2**width`` for packed ``base (..., W)``.

    Returns shape ``base.shape[:-1] + offsets.shape + (W,)``.
    """
    base = np.asarray(base, dtype=np.uint32)
    offsets = np.asarray(offsets, dtype=np.uint64)
    w = base.shape[-1]
    out = np.empty(base.shape[:-1] + offsets.shape + (w,), dtype=np.uint32)
    lead = (...,) + (None,) * offsets.ndim
    carry = offsets
    for k in range(w - 1, -1, -1):
        acc = base[lead + (k,)].astype(np.uint64) + carry
        out[..., k] = (acc & WORD_MASK).astype(np.uint32)
        carry = acc >> WORD_BITS
    return out & width_mask(width)


def counter_blocks(base: np.ndarray, count: int, width: int) -> np.ndarray:
    return add_counter(base, np.arange(count, dtype=np.uint64), width)


def encrypt_blocks(
    mode: ModeId,
    cipher: BlockCipher,
    schedule: np.ndarray,
    blocks: np.ndarray,
    iv: np.ndarray,
) -> np.ndarray:
    """One pass of ``mode`` over ``blocks (..., b, W)`` with IV ``(..., W)``.

    ``schedule`` must broadcast against ``blocks.shape[:-2]``.
    """
    enc = cipher.encrypt
    b = blocks.shape[-2]
    if mode is ModeId.ECB:
        return enc(schedule[..., None, :], blocks)
    if mode is ModeId.CTR:
        keystream = enc(schedule[..., None, :], counter_blocks(iv, b, cipher.block_bits))
        return blocks ^ keystream
    out = np.empty(np.broadcast_shapes(blocks.shape, iv.shape[:-1] + (b, blocks.shape[-1])), dtype=np.uint32)
    prev = iv
    if mode is ModeId.CBC:
        for j in range(b):
            prev = out[..., j, :] = enc(schedule, prev ^ blocks[..., j, :])
    elif mode is ModeId.CFB:
        for j in range(b):
            prev = out[..., j, :] = enc(schedule, prev) ^ blocks[..., j, :]
    elif mode is ModeId.OFB:
        stream = enc(schedule, iv)
        for j in range(b):
            out[..., j, :] = blocks[..., j, :] ^ stream
            if j + 1 < b:
                stream = enc(schedule, stream)
    elif mode is ModeId.PCBC:
        # feedback register P_{j-1} xor C_{j-1}, starting from P_0 = 0, C_0 = iv
        for j in range(b):
            out[..., j, :] = enc(schedule, prev ^ blocks[..., j, :])
            prev = out[..., j, :] ^ blocks[..., j, :]
    else:  # pragma: no cover
        raise ValueError(mode)
    return out


def decrypt_blocks(
    mode: ModeId,
    cipher: BlockCipher,
    schedule: np.ndarray,
    blocks: np.ndarray,
    iv: np.ndarray,
) -> np.ndarray:
    """Inverse of :func:`encrypt_blocks` for the same schedule and IV."""
    dec = cipher.decrypt
    b = blocks.shape[-2]
    if mode in (ModeId.OFB, ModeId.CTR):
        return encrypt_blocks(mode, cipher, schedule, blocks, iv)
    if mode is ModeId.ECB:
        return dec(schedule[..., None, :], blocks)
    prev = np.concatenate(
        [np.broadcast_to(iv[..., None, :], blocks.shape[:-2] + (1, blocks.shape[-1])), blocks[..., :-1, :]],
        axis=-2,
    )
    if mode is ModeId.CBC:
        return dec(schedule[..., None, :], blocks) ^ prev
    if mode is ModeId.CFB:
        return cipher.encrypt(schedule[..., None, :], prev) ^ blocks
    if mode is ModeId.PCBC:
        inner = dec(schedule[..., None, :], blocks)
        out = np.empty_like(inner)
        feedback = iv
        for j in range(b):
            out[..., j, :] = inner[..., j, :] ^ feedback
            feedback = out[..., j, :] ^ blocks[..., j, :]
        return out
    raise ValueError(mode)  # pragma: no cover


@dataclass(frozen=True)
class SystemState:
    """One configuration of the iterated system: ``b`` blocks plus the IV."""

    blocks: tuple[BitBlock, ...]
    iv: BitBlock
    t: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise DimensionError("a state needs at least one block")
        widths = {blk.width for blk in self.blocks} | {self.iv.width}
        if len(widths) != 1:
            raise DimensionError(f"blocks and iv must share one width, got {sorted(widths)}")

    @property
    def width(self) -> int:
        return self.iv.width

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_cells(self) -> int:
        return self.width * self.n_blocks

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return blocks_to_array(self.blocks, self.width), int_to_words(self.iv.value, self.width)

    def flip_cell(self, cell: int) -> "SystemState":
        block, bit = divmod(cell, self.width)
        if not 0 <= block < self.n_blocks:
            raise DimensionError(f"cell {cell} outside a {self.n_cells}-cell state")
        blocks = list(self.blocks)
        blocks[block] = blocks[block].flip(bit)
        return replace(self, blocks=tuple(blocks))

    def bit_vector(self) -> np.ndarray:
        return np.array([int(ch) for blk in self.blocks for ch in blk.bits()], dtype=np.uint8)


@dataclass(frozen=True)
class ModeContext:
    """Mode, cipher and key of a system.

    ``counter_base`` is only allowed for CTR; when set it replaces the IV as the
    counter base of the first step (``t == 0``).  Later steps always count from
    the chained IV.
    """

    mode: ModeId
    spec: CipherSpec
    key: Key
    counter_base: BitBlock | None = None
    _schedule: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ModeId.parse(self.mode))
        if self.counter_base is not None and self.mode is not ModeId.CTR:
            raise ValueError("counter_base is only meaningful for CTR")
        if self.key.width != self.spec.key_bits:
            raise DimensionError(f"{self.spec.id} expects {self.spec.key_bits}-bit keys")
        sched = self.cipher.schedule(int_to_words(self.key.value, self.key.width)[None])[0]
        object.__setattr__(self, "_schedule", sched)

    @property
    def cipher(self) -> BlockCipher:
        return get_cipher(self.spec)

    @property
    def schedule(self) -> np.ndarray:
        return self._schedule


def start_iv(ctx: ModeContext, state: SystemState) -> np.ndarray:
    """Packed IV (or CTR counter base) that one pass over ``state`` starts from."""
    if ctx.counter_base is not None and state.t == 0:
        return int_to_words(ctx.counter_base.value, ctx.counter_base.width)
    return int_to_words(state.iv.value, state.width)


def _check_width(ctx: ModeContext, state: SystemState) -> None:
    if state.width != ctx.spec.block_bits:
        raise DimensionError(f"{ctx.spec.id} expects {ctx.spec.block_bits}-bit blocks, state has {state.width}")


def encrypt_once(ctx: ModeContext, state: SystemState) -> SystemState:
    """Apply the mode once; the new IV is the last ciphertext block."""
    _check_width(ctx, state)
    blocks, _ = state.as_arrays()
    out = encrypt_blocks(ctx.mode, ctx.cipher, ctx.schedule[None], blocks[None], start_iv(ctx, state)[None])
    new_blocks = array_to_blocks(out, state.width)
    return SystemState(new_blocks, new_blocks[-1], state.t + 1)


def decrypt_once(ctx: ModeContext, state: SystemState, iv: BitBlock | None = None) -> SystemState:
    """Recover the text that :func:`encrypt_once` turned into ``state``.

    ``iv`` is the IV the encryption used.  A state returned by
    :func:`encrypt_once` carries the chained IV instead, so pass the original
    one explicitly; when omitted, ``state.iv`` is taken as the original.
    """
    _check_width(ctx, state)
    iv = state.iv if iv is None else iv
    blocks, _ = state.as_arrays()
    prev_t = max(state.t - 1, 0)
    start = start_iv(ctx, SystemState(state.blocks, iv, prev_t))
    out = decrypt_blocks(ctx.mode, ctx.cipher, ctx.schedule[None], blocks[None], start[None])
    return SystemState(array_to_blocks(out, state.width), iv, prev_t)


def iterate(ctx: ModeContext, plaintext: SystemState, steps: int) -> list[SystemState]:
    """States at ``t = 1..steps`` of the iterated system."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    states = []
    state = plaintext
    for _ in range(steps):
        state = encrypt_once(ctx, state)
        states.append(state)
    return states


def counter_sequence(base: BitBlock, count: int) -> tuple[BitBlock, ...]:
    """``base + j mod 2**n`` for ``j = 0..count-1``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    words = counter_blocks(int_to_words(base.value, base.width), count, base.width)
    return array_to_blocks(words, base.width)


def write_trajectory_csv(path: str | Path, states: Sequence[SystemState]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "block_index", "block_hex", "iv_hex"])
        for state in states:
            for j, blk in enumerate(state.blocks, start=1):
                writer.writerow([state.t, j, blk.hex(), state.iv.hex()])


def make_state(blocks: Sequence[BitBlock | int], iv: BitBlock | int, width: int) -> SystemState:
    """Convenience constructor accepting plain integers."""
    conv = [blk if isinstance(blk, BitBlock) else BitBlock(blk, width) for blk in blocks]
    iv = iv if isinstance(iv, BitBlock) else BitBlock(iv, width)
    return SystemState(tuple(conv), iv)
