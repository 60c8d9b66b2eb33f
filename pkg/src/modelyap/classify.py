"""Nearest-mean classification of lambda(t) traces by mode and cipher family."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from modelyap.bits import DimensionError
from modelyap.ensemble import EnsembleResult, transient_start
from modelyap.lyapunov import LyapunovTrace
from modelyap.modes import ALL_MODES, ModeId

STORE_VERSION = 1
PAIR = frozenset({ModeId.OFB, ModeId.CTR})
CLASSES = ("ECB", "CBC", "CFB", "PCBC", "OFB/CTR")


class ProfileSetError(ValueError):
    def __init__(self, gaps):
        self.gaps = sorted(gaps)
        super().__init__("missing profiles for " + ", ".join(f"{m}/{f}" for m, f in self.gaps))


@dataclass(frozen=True)
class ModeProfile:
    mode: ModeId
    family: str
    mean_curve: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    source_ciphers: tuple[str, ...]

    @property
    def pair_tagged(self) -> bool:
        return self.mode in PAIR

    @property
    def length(self) -> int:
        return len(self.mean_curve)

    def as_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "family": self.family,
            "pair_tagged": self.pair_tagged,
            "source_ciphers": list(self.source_ciphers),
            "mean_curve": [float(v) for v in self.mean_curve],
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModeProfile":
        return cls(
            ModeId.parse(d["mode"]),
            d["family"],
            np.asarray(d["mean_curve"], dtype=float),
            np.asarray(d["lower"], dtype=float),
            np.asarray(d["upper"], dtype=float),
            tuple(d["source_ciphers"]),
        )


@dataclass(frozen=True)
class Verdict:
    predicted: frozenset
    family: str
    distance: float
    runner_up_margin: float
    distances: tuple[tuple[str, str, float], ...] = ()

    @property
    def label(self) -> str:
        return class_of(self.predicted)

    def as_dict(self) -> dict:
        return {
            "predicted": sorted(m.value for m in self.predicted),
            "family": self.family,
            "distance": self.distance,
            "runner_up_margin": self.runner_up_margin,
            "distances": [{"mode": m, "family": f, "distance": d} for m, f, d in self.distances],
        }


def class_of(modes) -> str:
    """Collapse a mode or mode set to one of :data:`CLASSES`."""
    if isinstance(modes, (str, ModeId)):
        modes = {ModeId.parse(modes)}
    modes = frozenset(ModeId.parse(m) for m in modes)
    if modes <= PAIR:
        return "OFB/CTR"
    if len(modes) != 1:
        raise ValueError(f"not a single class: {sorted(m.value for m in modes)}")
    return next(iter(modes)).value


def build_profiles(
    results: Iterable[EnsembleResult],
    required: Iterable[tuple[ModeId, str]] | None = None,
) -> list[ModeProfile]:
    """One profile per (mode, family), pooling members of every cipher given.

    ``required`` defaults to all six modes for each family present.
    """
    groups: dict[tuple[ModeId, str], list[EnsembleResult]] = defaultdict(list)
    for res in results:
        groups[(res.config.mode, res.family)].append(res)
    if required is None:
        families = {f for _, f in groups}
        required = [(m, f) for f in families for m in ALL_MODES]
    gaps = {(ModeId.parse(m).value, f) for m, f in required if (ModeId.parse(m), f) not in groups}
    if gaps:
        raise ProfileSetError(gaps)
    profiles = []
    for (mode, family), group in sorted(groups.items(), key=lambda kv: (kv[0][1], ALL_MODES.index(kv[0][0]))):
        lengths = {r.config.T for r in group}
        if len(lengths) != 1:
            raise DimensionError(f"{mode.value}/{family}: results disagree on T {sorted(lengths)}")
        curves = np.concatenate([r.normalized_curves() for r in group])
        ciphers = tuple(sorted({r.config.cipher.id for r in group}))
        profiles.append(
            ModeProfile(mode, family, curves.mean(axis=0), curves.min(axis=0), curves.max(axis=0), ciphers)
        )
    return profiles


def _normalized(trace) -> np.ndarray:
    if isinstance(trace, LyapunovTrace):
        return trace.normalized
    return np.asarray(trace, dtype=float)


def distance(curve: np.ndarray, profile: ModeProfile) -> float:
    """RMS difference over the post-transient window ``[T/4, T]``."""
    T = profile.length
    s = transient_start(T) - 1
    d = curve[s:T] - profile.mean_curve[s:]
    return float(math.sqrt(np.mean(d * d)))


def classify_trace(trace, profiles: Sequence[ModeProfile]) -> Verdict:
    """Nearest profile mean; OFB and CTR are reported together when they lead.

    ``trace`` is a :class:`LyapunovTrace` or an already normalised curve.
    """
    if not profiles:
        raise ValueError("no profiles")
    curve = _normalized(trace)
    lengths = {p.length for p in profiles}
    if len(lengths) != 1:
        raise DimensionError(f"profiles disagree on length {sorted(lengths)}")
    T = lengths.pop()
    if len(curve) < T:
        raise DimensionError(f"trace has {len(curve)} steps, profiles need {T}")
    if not np.all(np.isfinite(curve[transient_start(T) - 1 : T])):
        raise DimensionError("trace is not finite over the comparison window")
    scored = sorted(((distance(curve, p), i) for i, p in enumerate(profiles)), key=lambda x: x)
    best_d, best_i = scored[0]
    best = profiles[best_i]
    predicted = {best.mode}
    if best.pair_tagged:
        in_pair = [d for d, i in scored[1:] if profiles[i].mode in PAIR and profiles[i].mode is not best.mode
                   and profiles[i].family == best.family]
        out_pair = [d for d, i in scored[1:] if profiles[i].mode not in PAIR]
        if in_pair and (not out_pair or in_pair[0] < out_pair[0]):
            predicted = set(PAIR)
    others = [d for d, i in scored[1:] if not (profiles[i].mode in predicted and profiles[i].family == best.family)]
    margin = (others[0] - best_d) if others else 0.0
    assert all(best_d <= d for d, _ in scored)
    table = tuple((profiles[i].mode.value, profiles[i].family, d) for d, i in scored)
    return Verdict(frozenset(predicted), best.family, best_d, max(0.0, margin), table)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows true class, columns predicted class, both over CLASSES
    family_correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 1.0

    @property
    def family_accuracy(self) -> float:
        return self.family_correct / self.total if self.total else 1.0

    def is_diagonal(self) -> bool:
        return not (self.counts - np.diag(np.diag(self.counts))).any()

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["true\\predicted", *CLASSES])
            for name, row in zip(CLASSES, self.counts):
                writer.writerow([name, *(int(v) for v in row)])


def confusion_matrix(labeled: Iterable[tuple[object, ModeId, str]], profiles: Sequence[ModeProfile]) -> ConfusionMatrix:
    """Tally verdicts for ``(trace, true mode, true family)`` triples."""
    supported = {(p.mode, p.family) for p in profiles}
    counts = np.zeros((len(CLASSES), len(CLASSES)), dtype=int)
    fam_ok = total = 0
    for trace, mode, family in labeled:
        mode = ModeId.parse(mode)
        if (mode, family) not in supported:
            raise ProfileSetError({(mode.value, family)})
        v = classify_trace(trace, profiles)
        counts[CLASSES.index(class_of(mode)), CLASSES.index(v.label)] += 1
        fam_ok += v.family == family
        total += 1
    return ConfusionMatrix(counts, fam_ok, total)


def save_profiles(profiles: Sequence[ModeProfile], path: str | Path) -> None:
    doc = {"version": STORE_VERSION, "profiles": [p.as_dict() for p in profiles]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_profiles(path: str | Path) -> list[ModeProfile]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != STORE_VERSION:
        raise ValueError(f"{path}: unsupported profile store version {doc.get('version')!r}")
    return [ModeProfile.from_dict(d) for d in doc["profiles"]]
