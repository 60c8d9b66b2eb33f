"""Randomised experiment ensembles and their aggregate statistics."""
from __future__ import annotations

import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from modelyap.bits import BitBlock, Key, array_to_blocks, int_to_words, n_words, width_mask, words_to_int
from modelyap.ciphers import CipherSpec, get_cipher
from modelyap.lyapunov import (
    CONVERGENCE_TOL,
    LyapunovTrace,
    PerturbationPolicy,
    PerturbationSpec,
    RegisterPolicy,
    lambda_upper_bound,
    propagate,
)
from modelyap.modes import ALL_MODES, ModeId, SystemState
from modelyap.stats import paired_t_test

log = logging.getLogger(__name__)

WEAK_KEY_RETRIES = 1000
# members per propagate() call: keeps the (M, N, N) float64 product near 64 MiB
_CHUNK_ELEMENTS = 1 << 23


class ConfigError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    cipher: CipherSpec
    mode: ModeId
    b: int = 5
    ensemble_size: int = 200
    T: int = 200
    rng_seed: int = 0
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    register_policy: RegisterPolicy = RegisterPolicy.AUTO

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ModeId.parse(self.mode))
        object.__setattr__(self, "register_policy", RegisterPolicy(self.register_policy))
        if self.b < 1:
            raise ConfigError(f"b must be at least 1, got {self.b}")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be at least 2")
        if self.T < 2:
            raise ConfigError("T must be at least 2")
        if not 0 <= self.rng_seed < 1 << 64:
            raise ConfigError("rng_seed must be a 64-bit unsigned integer")
        if self.perturbation.bit is not None:
            self.perturbation.bit_for(self.cipher.block_bits)

    @property
    def lambda_m(self) -> float:
        return lambda_upper_bound(self.b, self.cipher.block_bits)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        c = d["cipher"]
        spec = CipherSpec(c["id"], int(c["block_bits"]), int(c["key_bits"]), int(c["rounds"]), c.get("seed"))
        p = d.get("perturbation") or {}
        return cls(
            spec,
            d["mode"],
            int(d["b"]),
            int(d["ensemble_size"]),
            int(d["T"]),
            int(d["rng_seed"]),
            PerturbationSpec(p.get("bit"), p.get("policy", PerturbationPolicy.FIXED_LSB)),
            d.get("register_policy", RegisterPolicy.AUTO),
        )

    def as_dict(self) -> dict:
        return {
            "cipher": self.cipher.as_dict(),
            "mode": self.mode.value,
            "b": self.b,
            "ensemble_size": self.ensemble_size,
            "T": self.T,
            "rng_seed": self.rng_seed,
            "perturbation": {"policy": self.perturbation.policy.value, "bit": self.perturbation.bit},
            "register_policy": self.register_policy.value,
        }


class DatasetMember(NamedTuple):
    plaintext: SystemState
    key: Key
    iv: BitBlock
    bit: int  # 1-based index of the flipped bit in block 1
    register_seed: int


def _random_words(rng: np.random.Generator, width: int, count: int = 1) -> np.ndarray:
    words = rng.integers(0, 1 << 32, size=(count, n_words(width)), dtype=np.uint32)
    return words & width_mask(width)


def generate_dataset(config: ExperimentConfig) -> list[DatasetMember]:
    """Seeded members with pairwise distinct, non-weak keys.

    The stream does not depend on the mode, so ensembles of different modes
    with the same seed share their plaintexts, keys and IVs member by member.
    """
    spec = config.cipher
    weak = get_cipher(spec).weak_keys()
    rng = np.random.default_rng(config.rng_seed)
    n = spec.block_bits
    seen: set[int] = set()
    members = []
    for _ in range(config.ensemble_size):
        for _attempt in range(WEAK_KEY_RETRIES + 1):
            key = words_to_int(_random_words(rng, spec.key_bits)[0])
            if key not in seen and key not in weak:
                break
        else:
            raise GenerationError(f"no admissible key after {WEAK_KEY_RETRIES} retries")
        seen.add(key)
        blocks = array_to_blocks(_random_words(rng, n, config.b), n)
        iv = BitBlock(words_to_int(_random_words(rng, n)[0]), n)
        drawn_bit = int(rng.integers(1, n + 1))
        register_seed = int(rng.integers(0, 1 << 63))
        if config.perturbation.policy is PerturbationPolicy.RANDOM_PER_MEMBER:
            bit = drawn_bit
        else:
            bit = config.perturbation.bit_for(n)
        members.append(DatasetMember(SystemState(blocks, iv), Key(key, spec.key_bits), iv, bit, register_seed))
    return members


def summarize_curves(curves: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Mean curve, sample standard deviation and range of the final values."""
    curves = np.asarray(curves, dtype=float)
    final = curves[:, -1]
    sigma = float(np.std(final, ddof=1)) if len(final) > 1 else 0.0
    return curves.mean(axis=0), sigma, float(final.max() - final.min())


def mean_converged(mean_curve: Sequence[float], tol: float = CONVERGENCE_TOL) -> bool:
    return len(mean_curve) >= 2 and bool(abs(mean_curve[-2] - mean_curve[-1]) < tol)


@dataclass
class EnsembleResult:
    config: ExperimentConfig
    member_eps: list[list[int]]
    member_curves: np.ndarray  # (kept members, T)
    kept: list[int]
    mean_lambda: np.ndarray
    sigma: float
    delta: float
    converged: bool

    @property
    def excluded(self) -> list[int]:
        return sorted(set(range(len(self.member_eps))) - set(self.kept))

    @property
    def lambda_m(self) -> float:
        return self.config.lambda_m

    @property
    def final_lambdas(self) -> np.ndarray:
        return self.member_curves[:, -1]

    @property
    def family(self) -> str:
        return self.config.cipher.family

    def traces(self) -> list[LyapunovTrace]:
        return [
            LyapunovTrace.from_counts(eps, self.config.b, self.config.cipher.block_bits, self.config.T)
            for eps in self.member_eps
        ]

    def normalized_curves(self) -> np.ndarray:
        return self.member_curves / self.lambda_m

    def to_json(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "lambda_m": self.lambda_m,
            "member_final_lambda": [float(v) for v in self.final_lambdas],
            "excluded_members": self.excluded,
            "mean_lambda": [float(v) for v in self.mean_lambda],
            "sigma": self.sigma,
            "delta": self.delta,
            "converged": self.converged,
        }

    def write(self, outdir: str | Path) -> Path:
        """Member CSVs (with exact-count sidecars) and ``ensemble.json``."""
        outdir = Path(outdir)
        members = outdir / "members"
        members.mkdir(parents=True, exist_ok=True)
        for i, trace in enumerate(self.traces()):
            trace.write_csv(members / f"member_{i:04d}.csv", members / f"member_{i:04d}.eps")
        path = outdir / "ensemble.json"
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n")
        return path


def load_result(outdir: str | Path) -> EnsembleResult:
    """Rebuild a written result from its config echo and exact member counts."""
    outdir = Path(outdir)
    doc = json.loads((outdir / "ensemble.json").read_text())
    config = ExperimentConfig.from_dict(doc["config"])
    member_eps = []
    for i in range(config.ensemble_size):
        text = (outdir / "members" / f"member_{i:04d}.eps").read_text()
        member_eps.append([int(line.split(",")[1]) for line in text.splitlines() if line])
    return aggregate(config, member_eps)


def _propagate_chunk(args) -> list[list[int]]:
    config, chunk = args
    cipher = get_cipher(config.cipher)
    n = config.cipher.block_bits
    keys = np.stack([int_to_words(m.key.value, m.key.width) for m in chunk])
    pts = np.stack([m.plaintext.as_arrays()[0] for m in chunk])
    ivs = np.stack([int_to_words(m.iv.value, n) for m in chunk])
    return propagate(
        config.mode,
        cipher,
        cipher.schedule(keys),
        pts,
        ivs,
        [m.bit - 1 for m in chunk],
        config.T,
        config.register_policy,
        [m.register_seed for m in chunk],
    )


def _chunks(config: ExperimentConfig, members: list[DatasetMember]) -> list[list[DatasetMember]]:
    cells = config.b * config.cipher.block_bits
    size = max(1, _CHUNK_ELEMENTS // (cells * cells))
    return [members[i : i + size] for i in range(0, len(members), size)]


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_ensemble(config: ExperimentConfig, jobs: int = 1) -> EnsembleResult:
    """Evolve every member for ``T`` steps and aggregate the curves.

    Work is split into member chunks; with ``jobs > 1`` the chunks go to a
    process pool.  Counts are exact integers and the aggregation runs in
    member order afterwards, so the result does not depend on ``jobs``.
    """
    members = generate_dataset(config)
    chunks = _chunks(config, members)
    tasks = [(config, c) for c in chunks]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            parts = list(pool.map(_propagate_chunk, tasks))
    else:
        parts = [_propagate_chunk(t) for t in tasks]
    member_eps = list(itertools.chain.from_iterable(parts))
    return aggregate(config, member_eps)


def aggregate(config: ExperimentConfig, member_eps: list[list[int]]) -> EnsembleResult:
    kept, curves = [], []
    for i, eps in enumerate(member_eps):
        trace = LyapunovTrace.from_counts(eps, config.b, config.cipher.block_bits, config.T)
        if trace.extinct_at is not None:
            log.warning("member %d lost all defects at t=%d; excluded from the mean", i, trace.extinct_at)
            continue
        kept.append(i)
        curves.append(trace.lam)
    if not curves:
        raise GenerationError("every member went extinct")
    curves = np.asarray(curves, dtype=float)
    mean, sigma, delta = summarize_curves(curves)
    return EnsembleResult(config, member_eps, curves, kept, mean, sigma, delta, mean_converged(mean))


# -- comparisons across modes -----------------------------------------------------------


def transient_start(T: int) -> int:
    """First step (1-based) of the post-transient window ``[T/4, T]``."""
    return max(1, math.ceil(T / 4))


def envelope_outlier_rate(curves_a: np.ndarray, curves_b: np.ndarray) -> float:
    """Fraction of A's members inside B's pointwise [min, max] envelope on ``[T/4, T]``."""
    curves_a = np.atleast_2d(np.asarray(curves_a, dtype=float))
    curves_b = np.atleast_2d(np.asarray(curves_b, dtype=float))
    if curves_a.shape[1] != curves_b.shape[1]:
        raise ValueError("curve sets must share T")
    if not len(curves_a) or not len(curves_b):
        raise ValueError("curve sets must be non-empty")
    s = transient_start(curves_a.shape[1]) - 1
    lo, hi = curves_b[:, s:].min(axis=0), curves_b[:, s:].max(axis=0)
    inside = ((curves_a[:, s:] >= lo) & (curves_a[:, s:] <= hi)).all(axis=1)
    return float(inside.mean())


def mode_pair_tests(results: Mapping[ModeId, EnsembleResult]) -> dict[str, dict]:
    """Paired t-tests on final lambda for every pair of the given modes."""
    out = {}
    order = [m for m in ALL_MODES if m in results]
    for a, b in itertools.combinations(order, 2):
        ra, rb = results[a], results[b]
        common = sorted(set(ra.kept) & set(rb.kept))
        xa = [ra.member_curves[ra.kept.index(i), -1] for i in common]
        xb = [rb.member_curves[rb.kept.index(i), -1] for i in common]
        t, p = paired_t_test(xa, xb)
        out[f"{a.value}-{b.value}"] = {"t": t if math.isfinite(t) else str(t), "p": p}
    return out


@dataclass(frozen=True)
class RegressionFit:
    mode: str
    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[int, float], ...]

    def predict(self, b: float) -> float:
        return self.slope * math.log(b) + self.intercept

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "points": [list(p) for p in self.points],
        }


def fit_lambda_vs_blocks(points: Iterable[tuple[int, float]], mode: str = "") -> RegressionFit:
    """Least squares ``lambda = alpha ln(b) + beta``."""
    points = tuple((int(b), float(lam)) for b, lam in points)
    if len({b for b, _ in points}) < 3:
        raise FitError("need at least three distinct block counts")
    if any(b < 1 for b, _ in points):
        raise FitError("block counts must be positive")
    x = np.log([b for b, _ in points])
    y = np.array([lam for _, lam in points])
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    ss_res = float(((y - (slope * x + intercept)) ** 2).sum())
    ss_tot = float(((y - ym) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RegressionFit(str(getattr(mode, "value", mode)), slope, intercept, r2, points)


def experiment_summary(
    results: Mapping[ModeId, EnsembleResult],
    fits: Sequence[RegressionFit] = (),
) -> dict:
    """Results document shared by ``run`` and ``sweep-blocks``."""
    order = [m for m in ALL_MODES if m in results]
    envelope = {
        f"{a.value}-in-{b.value}": envelope_outlier_rate(results[a].member_curves, results[b].member_curves)
        for a in order
        for b in order
        if a is not b
    }
    return {
        "modes": {m.value: results[m].to_json() for m in order},
        "t_tests": mode_pair_tests(results),
        "envelope_inside_fraction": envelope,
        "regression_fits": [f.as_dict() for f in fits],
    }
