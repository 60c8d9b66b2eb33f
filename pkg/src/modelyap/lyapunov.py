"""Defect propagation and Lyapunov exponents of iterated modes of operation.

A defect field assigns every cell of the state a multiplicity: the number of
propagation pathways that end in that cell.  One step evolves the reference
state and, for every cell carrying defects, a replica of the reference with
that cell complemented.  Each cell where a replica's image differs from the
reference's image inherits the replica's multiplicity.  The total number of
defects after ``t`` steps gives ``lambda(t) = ln(eps_t / eps_0) / t``.

Multiplicities are exact.  Internally they live in base-2**32 limbs so the
per-step accumulation is a float64 matrix product whose partial sums stay
below 2**53 and are therefore exact.

Replica IVs
-----------
``shared``
    every replica is evolved with the reference's IV (its last block).
``fresh``
    from the second step on, all replicas of a step share one IV register
    drawn afresh from a seeded stream keyed by (seed, step), so their
    keystream or chaining input is decorrelated from the reference's.
``auto``
    ``fresh`` for OFB, CTR and PCBC, ``shared`` otherwise.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from modelyap.bits import BitBlock, DimensionError, n_words, unpack_bits, width_mask, words_to_int
from modelyap.ciphers import BlockCipher
from modelyap.modes import ModeContext, ModeId, SystemState, encrypt_blocks, encrypt_once, start_iv

CONVERGENCE_TOL = 1.19e-4

_LIMB_BITS = 32
_LIMB_MASK = (1 << _LIMB_BITS) - 1
# float64 partial sums must stay exact: rows * 2**32 < 2**53
_MAX_CELLS = 1 << 20


class RegisterPolicy(str, enum.Enum):
    SHARED = "shared"
    FRESH = "fresh"
    AUTO = "auto"

    def resolve(self, mode: ModeId) -> "RegisterPolicy":
        if self is not RegisterPolicy.AUTO:
            return self
        if ModeId.parse(mode) in (ModeId.OFB, ModeId.CTR, ModeId.PCBC):
            return RegisterPolicy.FRESH
        return RegisterPolicy.SHARED


class PerturbationPolicy(str, enum.Enum):
    FIXED_LSB = "fixed-lsb"
    RANDOM_PER_MEMBER = "random-per-member"


@dataclass(frozen=True)
class PerturbationSpec:
    """Which bit of block 1 to flip; ``bit`` is 1-based with ``bit == n`` the LSB.

    ``bit=None`` means the least significant bit of whatever width is used.
    """

    bit: int | None = None
    policy: PerturbationPolicy = PerturbationPolicy.FIXED_LSB
    block: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "policy", PerturbationPolicy(self.policy))
        if self.block != 1:
            raise ValueError("the initial perturbation always sits in block 1")

    def bit_for(self, width: int) -> int:
        bit = width if self.bit is None else self.bit
        if not 1 <= bit <= width:
            raise DimensionError(f"bit index {bit} outside [1, {width}]")
        return bit

    def cell(self, width: int) -> int:
        return self.bit_for(width) - 1


def initial_perturbation(state: SystemState, pert: PerturbationSpec) -> SystemState:
    return state.flip_cell(pert.cell(state.width))


def lambda_upper_bound(b: int, n: int) -> float:
    """Mean-field bound ``ln(b * n)``: every defect reaching every cell."""
    if b < 1 or n < 1:
        raise ValueError("b and n must be positive")
    return math.log(b * n)


# -- exact multiplicities in limb form ---------------------------------------------


def _normalize(limbs: np.ndarray) -> np.ndarray:
    """Propagate carries so every limb is below 2**32 (non-negative int64 input)."""
    limbs = limbs.copy()
    k = 0
    while k < limbs.shape[-1]:
        carry = limbs[..., k] >> _LIMB_BITS
        if k + 1 == limbs.shape[-1]:
            if not carry.any():
                break
            limbs = np.concatenate([limbs, np.zeros(limbs.shape[:-1] + (1,), dtype=np.int64)], axis=-1)
        limbs[..., k] &= _LIMB_MASK
        limbs[..., k + 1] += carry
        k += 1
    return limbs


def _limbs_to_int(limbs: Sequence[int]) -> int:
    value = 0
    for limb in reversed(list(limbs)):
        value = (value << _LIMB_BITS) | int(limb)
    return value


def _int_to_limbs(value: int, count: int) -> list[int]:
    return [(value >> (_LIMB_BITS * k)) & _LIMB_MASK for k in range(count)]


def _totals(limbs: np.ndarray) -> list[int]:
    """Exact per-member sums of ``(M, N, K)`` limb arrays."""
    sums = limbs.sum(axis=1)  # < N * 2**32, exact in int64
    return [sum(int(s) << (_LIMB_BITS * k) for k, s in enumerate(row)) for row in sums]


def replica_register(seed: int, t: int, width: int) -> np.ndarray:
    """The IV shared by all replicas of step ``t`` under the fresh policy."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, t])
    words = rng.integers(0, 1 << 32, size=n_words(width), dtype=np.uint32)
    return words & width_mask(width)


def _cell_coords(cells: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w = n_words(width)
    block, bit = np.divmod(cells, width)
    pos = width - 1 - bit
    return block, w - 1 - pos // 32, (np.uint32(1) << (pos % 32).astype(np.uint32))


def _advance(
    mode: ModeId,
    cipher: BlockCipher,
    schedule: np.ndarray,
    ref: np.ndarray,
    iv: np.ndarray,
    mult: np.ndarray,
    replica_iv: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """One defect step for ``M`` independent systems at once.

    ``schedule (M, S)``, ``ref (M, b, W)``, ``iv (M, W)``, ``mult (M, N, K)``;
    ``replica_iv (M, W)`` is the replicas' IV, or ``None`` to share ``iv``.
    Returns the new reference blocks and multiplicities.
    """
    width = cipher.block_bits
    m_count, b, w = ref.shape
    n_cells = b * width
    active = np.flatnonzero(mult.any(axis=(0, 2)))
    r = active.size
    states = np.repeat(ref[:, None], r + 1, axis=1)
    blk, word, mask = _cell_coords(active, width)
    rows = np.arange(1, r + 1)
    states[:, rows, blk, word] ^= mask
    ivs = np.repeat(iv[:, None], r + 1, axis=1)
    if replica_iv is not None and r:
        ivs[:, 1:] = replica_iv[:, None]
    images = encrypt_blocks(mode, cipher, schedule[:, None, :], states, ivs)
    new_ref = images[:, 0]
    if r == 0:
        return new_ref, np.zeros((m_count, n_cells, mult.shape[-1]), dtype=np.int64)
    diff = unpack_bits(images[:, 1:] ^ images[:, :1], width).reshape(m_count, r, n_cells)
    acc = np.matmul(diff.transpose(0, 2, 1).astype(np.float64), mult[:, active].astype(np.float64))
    return new_ref, _normalize(acc.astype(np.int64))


def propagate(
    mode: ModeId,
    cipher: BlockCipher,
    schedules: np.ndarray,
    plaintexts: np.ndarray,
    ivs: np.ndarray,
    cells: Sequence[int],
    steps: int,
    policy: RegisterPolicy = RegisterPolicy.AUTO,
    register_seeds: Sequence[int] | None = None,
) -> list[list[int]]:
    """Exact defect counts ``eps_1..eps_T`` for a batch of systems.

    ``schedules (M, S)``, ``plaintexts (M, b, W)``, ``ivs (M, W)``; ``cells``
    gives each member's initially flipped cell.  A member whose defects die out
    gets a trailing ``0`` and no further entries.
    """
    mode = ModeId.parse(mode)
    policy = RegisterPolicy(policy).resolve(mode)
    m_count, b, _ = plaintexts.shape
    n_cells = b * cipher.block_bits
    if n_cells > _MAX_CELLS:
        raise DimensionError(f"{n_cells} cells exceed the exact-accumulation limit")
    if register_seeds is None:
        register_seeds = [0] * m_count
    mult = np.zeros((m_count, n_cells, 1), dtype=np.int64)
    mult[np.arange(m_count), np.asarray(cells), 0] = 1
    ref, iv = plaintexts.copy(), ivs.copy()
    eps: list[list[int]] = [[] for _ in range(m_count)]
    alive = np.ones(m_count, dtype=bool)
    for t in range(steps):
        replica_iv = None
        if policy is RegisterPolicy.FRESH and t > 0:
            replica_iv = np.stack([replica_register(seed, t, cipher.block_bits) for seed in register_seeds])
        ref, mult = _advance(mode, cipher, schedules, ref, iv, mult, replica_iv)
        iv = ref[:, -1].copy()
        for i, total in enumerate(_totals(mult)):
            if alive[i]:
                eps[i].append(total)
                alive[i] = total > 0
    return eps


# -- single-trajectory API ------------------------------------------------------------


@dataclass(frozen=True)
class DefectField:
    """Exact per-cell multiplicities at step ``t``."""

    multiplicities: tuple[int, ...]
    t: int = 0

    @classmethod
    def initial(cls, n_cells: int, cell: int) -> "DefectField":
        if not 0 <= cell < n_cells:
            raise DimensionError(f"cell {cell} outside [0, {n_cells})")
        counts = [0] * n_cells
        counts[cell] = 1
        return cls(tuple(counts), 0)

    @property
    def epsilon(self) -> int:
        return sum(self.multiplicities)

    @property
    def n_cells(self) -> int:
        return len(self.multiplicities)

    def _limbs(self) -> np.ndarray:
        count = max(1, -(-max(m.bit_length() for m in self.multiplicities) // _LIMB_BITS))
        return np.array([_int_to_limbs(m, count) for m in self.multiplicities], dtype=np.int64)[None]


def _replica_iv(ctx: ModeContext, policy, t: int, seed: int) -> np.ndarray | None:
    if RegisterPolicy(policy).resolve(ctx.mode) is RegisterPolicy.FRESH and t > 0:
        return replica_register(seed, t, ctx.spec.block_bits)
    return None


def defect_step(
    ctx: ModeContext,
    ref_state: SystemState,
    defects: DefectField,
    policy: RegisterPolicy | str = RegisterPolicy.AUTO,
    register_seed: int = 0,
) -> tuple[SystemState, DefectField, int]:
    """Advance the reference state and its defect field by one step."""
    if defects.t != ref_state.t:
        raise ValueError(f"field is at t={defects.t} but state at t={ref_state.t}")
    if defects.n_cells != ref_state.n_cells:
        raise DimensionError("defect field and state disagree on the number of cells")
    blocks, _ = ref_state.as_arrays()
    iv = start_iv(ctx, ref_state)
    replica_iv = _replica_iv(ctx, policy, ref_state.t, register_seed)
    new_ref, mult = _advance(
        ctx.mode,
        ctx.cipher,
        ctx.schedule[None],
        blocks[None],
        iv[None],
        defects._limbs(),
        None if replica_iv is None else replica_iv[None],
    )
    counts = tuple(_limbs_to_int(row) for row in mult[0])
    new_state = encrypt_once(ctx, ref_state)
    field_ = DefectField(counts, ref_state.t + 1)
    return new_state, field_, field_.epsilon


@dataclass(frozen=True)
class LyapunovTrace:
    """Defect counts and ``lambda(t)`` for ``t = 1..len(epsilon)``."""

    epsilon: tuple[int, ...]
    lambda_m: float
    requested_steps: int
    epsilon_log: tuple[float, ...] = field(init=False)
    lam: tuple[float, ...] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "epsilon", tuple(int(e) for e in self.epsilon))
        logs = tuple(math.log(e) if e > 0 else -math.inf for e in self.epsilon)
        object.__setattr__(self, "epsilon_log", logs)
        object.__setattr__(self, "lam", tuple(v / t for t, v in enumerate(logs, start=1)))

    @classmethod
    def from_counts(cls, eps: Sequence[int], b: int, n: int, steps: int | None = None) -> "LyapunovTrace":
        return cls(tuple(eps), lambda_upper_bound(b, n), len(eps) if steps is None else steps)

    @property
    def steps(self) -> int:
        return len(self.epsilon)

    @property
    def extinct_at(self) -> int | None:
        """Step at which all defects vanished (``lambda = -inf``), if any."""
        if self.epsilon and self.epsilon[-1] == 0:
            return len(self.epsilon)
        return None

    @property
    def final_lambda(self) -> float:
        return self.lam[-1]

    @property
    def normalized(self) -> np.ndarray:
        return np.asarray(self.lam) / self.lambda_m

    @property
    def converged_at(self) -> int | None:
        return converged_at(self.lam)

    def bound_holds(self) -> bool:
        """``ln eps_t <= t ln(b n)`` at every step."""
        return all(v <= t * self.lambda_m + 1e-12 for t, v in enumerate(self.epsilon_log, start=1))

    def write_csv(self, path: str | Path, exact_sidecar: str | Path | None = None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "ln_epsilon", "lambda", "lambda_normalized"])
            for t, (le, lam) in enumerate(zip(self.epsilon_log, self.lam), start=1):
                writer.writerow([t, repr(le), repr(lam), repr(lam / self.lambda_m)])
        if exact_sidecar is not None:
            Path(exact_sidecar).write_text("".join(f"{t},{e}\n" for t, e in enumerate(self.epsilon, 1)))


def converged_at(lam: Sequence[float], tol: float = CONVERGENCE_TOL) -> int | None:
    """Smallest ``t`` from which ``|lambda(t) - lambda(t+1)| < tol`` holds to the end."""
    lam = list(lam)
    if len(lam) < 2 or not all(math.isfinite(v) for v in lam[-2:]):
        return None
    start = None
    for t in range(len(lam) - 1, 0, -1):
        if abs(lam[t - 1] - lam[t]) < tol:
            start = t
        else:
            break
    return start


def read_trace_csv(path: str | Path, lambda_m: float | None = None) -> tuple[np.ndarray, float]:
    """Read ``lambda(t)`` and ``lambda_m`` back from a trace CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DimensionError(f"{path}: empty trace")
    lam = np.array([float(r["lambda"]) for r in rows])
    if lambda_m is None:
        finite = [(float(r["lambda"]), float(r["lambda_normalized"])) for r in rows if float(r["lambda_normalized"]) != 0]
        lambda_m = finite[0][0] / finite[0][1] if finite else 1.0
    return lam, lambda_m


def lyapunov_curve(
    ctx: ModeContext,
    plaintext: SystemState,
    pert: PerturbationSpec,
    steps: int,
    policy: RegisterPolicy | str = RegisterPolicy.AUTO,
    register_seed: int = 0,
) -> LyapunovTrace:
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if plaintext.width != ctx.spec.block_bits:
        raise DimensionError(f"{ctx.spec.id} expects {ctx.spec.block_bits}-bit blocks")
    blocks, _ = plaintext.as_arrays()
    iv = start_iv(ctx, plaintext)
    eps = propagate(
        ctx.mode,
        ctx.cipher,
        ctx.schedule[None],
        blocks[None],
        iv[None],
        [pert.cell(plaintext.width)],
        steps,
        RegisterPolicy(policy),
        [register_seed],
    )[0]
    return LyapunovTrace.from_counts(eps, plaintext.n_blocks, plaintext.width, steps)


class OracleBudgetError(RuntimeError):
    pass


def naive_defect_oracle(
    ctx: ModeContext,
    plaintext: SystemState,
    pert: PerturbationSpec,
    steps: int,
    policy: RegisterPolicy | str = RegisterPolicy.AUTO,
    register_seed: int = 0,
    max_replicas: int = 200_000,
) -> list[int]:
    """Defect counts by explicit pathway enumeration, without multiplicities.

    Every pathway is its own replica in a multiset; each one is rebuilt from
    the reference state and evolved separately.  Exponential cost: toy
    systems only.
    """
    if steps > 4:
        raise ValueError("the naive oracle is limited to 4 steps")
    n_cells = plaintext.n_cells
    width = plaintext.width

    def evolve(state: SystemState, iv: BitBlock) -> SystemState:
        return encrypt_once(ctx, SystemState(state.blocks, iv, state.t))

    def differing_cells(a: SystemState, b: SystemState) -> list[int]:
        return [int(c) for c in np.flatnonzero(a.bit_vector() != b.bit_vector())]

    ref = plaintext
    pathways = [pert.cell(width)]  # the multiset: one flipped cell per pathway
    eps = []
    for t in range(steps):
        register = _replica_iv(ctx, policy, t, register_seed)
        nxt_ref = encrypt_once(ctx, ref)
        grown = []
        for cell in pathways:
            replica = ref.flip_cell(cell)
            iv = ref.iv if register is None else BitBlock(words_to_int(register), width)
            out = evolve(replica, iv)
            grown.extend(differing_cells(out, nxt_ref))
            if len(grown) > max_replicas:
                raise OracleBudgetError(f"more than {max_replicas} pathways at t={t + 1}")
        pathways = grown
        ref = nxt_ref
        eps.append(len(pathways))
        if not pathways:
            break
    return eps
