"""Acceptance criteria 1-12, one reported PASS/FAIL line each.

Desk scale: ensemble 20, b = 5, ciphers TEA/XTEA/AES.  The ensembles are run
to T = 200 once; every desk-scale check reads the curves truncated at t = 60,
which is exactly what a T = 60 run produces (same dataset, same registers).
The CFB signature compares against Table II, whose values are at T = 200.

Criterion 11 (ensemble 200, T = 200) runs only with ``MODELYAP_FULL=1``.
"""
import dataclasses
import itertools
import math
import os

import numpy as np
import pytest
from click.testing import CliRunner

from modelyap.bits import Key
from modelyap.ciphers import MANDATORY, cipher_spec, toy_cipher
from modelyap.classify import build_profiles, classify_trace, confusion_matrix
from modelyap.cli import main
from modelyap.ensemble import ExperimentConfig, aggregate, fit_lambda_vs_blocks, mode_pair_tests, run_ensemble
from modelyap.lyapunov import (
    CONVERGENCE_TOL,
    PerturbationSpec,
    RegisterPolicy,
    lambda_upper_bound,
    lyapunov_curve,
    naive_defect_oracle,
)
from modelyap.modes import ALL_MODES, ModeContext, ModeId, make_state

DESK_T = 60
LONG_T = 200
DESK_SIZE = 20
SEEDS = {"tea": 101, "xtea": 202, "aes": 303}
E, C, O, F, R, P = (ModeId.ECB, ModeId.CBC, ModeId.OFB, ModeId.CFB, ModeId.CTR, ModeId.PCBC)

TABLE_II = {
    "tea": {E: 3.46554, O: 5.04817, C: 3.55596, R: 5.04853, F: 0.15926, P: 5.07467},
    "xtea": {E: 3.46564, O: 5.04816, C: 3.55598, R: 5.04787, F: 0.15925, P: 5.07451},
    "aes": {E: 4.15879, O: 5.73875, C: 4.24921, R: 5.73891, F: 0.17311, P: 5.76812},
}


def report(book, n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    book[n] = line
    print(line)
    return ok


def truncate(res, T):
    cfg = dataclasses.replace(res.config, T=T)
    return aggregate(cfg, [eps[:T] for eps in res.member_eps])


@pytest.fixture(scope="module")
def long_runs():
    out = {}
    for cid in MANDATORY:
        for mode in ALL_MODES:
            cfg = ExperimentConfig(cipher_spec(cid), mode, 5, DESK_SIZE, LONG_T, SEEDS[cid])
            out[cid, mode] = run_ensemble(cfg)
    return out


@pytest.fixture(scope="module")
def desk(long_runs):
    return {k: truncate(v, DESK_T) for k, v in long_runs.items()}


def test_criterion_01_upper_bound(acceptance_report):
    a, b = lambda_upper_bound(5, 64), lambda_upper_bound(5, 128)
    ok = round(a, 5) == 5.76832 and round(b, 5) == 6.46147
    assert report(acceptance_report, 1, ok, f"ln(320)={a:.5f} ln(640)={b:.5f}")


def test_criterion_02_ecb_plateau(acceptance_report, desk):
    parts, ok = [], True
    for cid, target in (("tea", math.log(32)), ("xtea", math.log(32)), ("aes", math.log(64))):
        lam = desk[cid, E].mean_lambda[-1]
        ok &= abs(lam - target) <= 0.02
        parts.append(f"{cid}={lam:.4f} (target {target:.4f})")
    assert report(acceptance_report, 2, ok, "ECB lambda(60): " + ", ".join(parts) + " tol 0.02")


def test_criterion_03_mode_ordering(acceptance_report, desk):
    parts, ok = [], True
    for cid in MANDATORY:
        lam = {m: desk[cid, m].mean_lambda[-1] for m in ALL_MODES}
        lm = desk[cid, E].lambda_m
        close = abs(lam[O] - lam[R]) <= 0.01 * lm
        chain = lam[F] < lam[E] < lam[C] < min(lam[O], lam[R]) and max(lam[O], lam[R]) < lam[P] <= lm
        band = 0.85 < lam[P] / lm < 1.0
        ok &= close and chain and band
        parts.append(
            f"{cid}: " + " ".join(f"{m.value}={lam[m]:.3f}" for m in (F, E, C, O, R, P)) + f" PCBC/lm={lam[P] / lm:.3f}"
        )
    detail = "; ".join(parts) + " (|OFB-CTR| <= 0.01 lm, PCBC/lm in (0.85,1))"
    assert report(acceptance_report, 3, ok, detail)


def test_criterion_04_cfb_signature(acceptance_report, long_runs, desk):
    lam = {cid: long_runs[cid, F].mean_lambda[-1] for cid in MANDATORY}
    at60 = {cid: desk[cid, F].mean_lambda[-1] for cid in MANDATORY}
    ok = abs(lam["tea"] - lam["xtea"]) <= 0.02 and all(v < 0.25 for v in lam.values())
    detail = (
        "CFB lambda(200): " + " ".join(f"{c}={v:.5f}" for c, v in lam.items())
        + " (< 0.25, |tea-xtea| <= 0.02); at t=60: " + " ".join(f"{c}={v:.3f}" for c, v in at60.items())
    )
    assert report(acceptance_report, 4, ok, detail)


def test_criterion_05_t_tests(acceptance_report, desk):
    core = (E, C, F, P)
    must_differ = list(itertools.combinations(core, 2)) + [(a, b) for a in core for b in (O, R)]
    ok, worst_sig, ofb_ctr = True, 0.0, {}
    for cid in MANDATORY:
        tests = mode_pair_tests({m: desk[cid, m] for m in ALL_MODES})

        def p_of(a, b):
            key = f"{a.value}-{b.value}" if f"{a.value}-{b.value}" in tests else f"{b.value}-{a.value}"
            return tests[key]["p"]

        sig = [p_of(a, b) for a, b in must_differ]
        worst_sig = max(worst_sig, max(sig))
        ofb_ctr[cid] = p_of(O, R)
        ok &= all(p < 0.05 for p in sig) and ofb_ctr[cid] > 0.05
    detail = f"max p over 14 distinct pairs = {worst_sig:.2e} (< 0.05); OFB-CTR p: " + " ".join(
        f"{c}={p:.3f}" for c, p in ofb_ctr.items()
    ) + " (> 0.05)"
    assert report(acceptance_report, 5, ok, detail)


def test_criterion_06_oracle_equivalence(acceptance_report):
    rng = np.random.default_rng(606)
    policies = (RegisterPolicy.SHARED, RegisterPolicy.FRESH)
    combos = list(itertools.product(("xor", "fixed-permutation"), ALL_MODES, policies))
    mismatches = 0
    for i in range(50):
        kind, mode, policy = combos[i % len(combos)]
        n, b = int(rng.choice([4, 8])), int(rng.choice([2, 3]))
        steps = 4 if n == 4 else 3
        seed = int(rng.integers(0, 2**31))
        ctx = ModeContext(mode, toy_cipher(kind, n, seed=seed % 997), Key(int(rng.integers(0, 1 << n)), n))
        p = make_state([int(v) for v in rng.integers(0, 1 << n, size=b)], int(rng.integers(0, 1 << n)), n)
        pert = PerturbationSpec(bit=int(rng.integers(1, n + 1)))
        fast = list(lyapunov_curve(ctx, p, pert, steps, policy, seed).epsilon)
        mismatches += fast != naive_defect_oracle(ctx, p, pert, steps, policy, seed)
    assert report(acceptance_report, 6, mismatches == 0, f"{50 - mismatches}/50 toy configurations match exactly")


def test_criterion_07_linear_cipher(acceptance_report):
    rng = np.random.default_rng(707)
    bad = 0
    for _ in range(24):
        n, b = int(rng.integers(4, 17)), int(rng.integers(1, 6))
        ctx = ModeContext("ECB", toy_cipher("xor", n), Key(int(rng.integers(0, 1 << n)), n))
        p = make_state([int(v) for v in rng.integers(0, 1 << n, size=b)], int(rng.integers(0, 1 << n)), n)
        trace = lyapunov_curve(ctx, p, PerturbationSpec(bit=int(rng.integers(1, n + 1))), 60)
        bad += any(v != 0.0 for v in trace.lam)
    assert report(acceptance_report, 7, bad == 0, f"ECB+XOR lambda(t)=0 for t<=60 in {24 - bad}/24 seeds")


def test_criterion_08_growth_bound(acceptance_report, long_runs):
    traces = [t for res in long_runs.values() for t in res.traces()]
    bad = sum(not t.bound_holds() for t in traces)
    assert report(acceptance_report, 8, bad == 0, f"ln eps_t <= t ln(bn) for {len(traces) - bad}/{len(traces)} traces")


def test_criterion_09_classification(acceptance_report, desk):
    tea_profiles = build_profiles(desk["tea", m] for m in ALL_MODES)
    labeled = [(t, m, "64-bit") for m in ALL_MODES for t in desk["xtea", m].traces()]
    cm = confusion_matrix(labeled, tea_profiles)
    # family: TEA (64-bit) plus the first half of the AES members (128-bit) as training data;
    # XTEA traces and the held-out AES members as test data
    half = DESK_SIZE // 2
    aes_train, aes_test = {}, []
    for m in ALL_MODES:
        res = desk["aes", m]
        aes_train[m] = aggregate(dataclasses.replace(res.config, ensemble_size=half), res.member_eps[:half])
        aes_test += [(t, "128-bit") for t in res.traces()[half:]]
    mixed = build_profiles(list(aes_train.values()) + [desk["tea", m] for m in ALL_MODES])
    fam_tests = [(t, "64-bit") for t, _, _ in labeled] + aes_test
    fam_ok = sum(classify_trace(t, mixed).family == fam for t, fam in fam_tests)
    ok = cm.is_diagonal() and cm.total == 6 * DESK_SIZE and fam_ok == len(fam_tests)
    detail = f"XTEA vs TEA profiles {int(np.trace(cm.counts))}/{cm.total} correct over 5 classes; family {fam_ok}/{len(fam_tests)}"
    assert report(acceptance_report, 9, ok, detail)


def test_criterion_10_block_sweep(acceptance_report):
    blocks = (2, 4, 8, 12, 16)
    finals = {}
    for mode in (E, C, O, R, P):
        finals[mode] = [
            run_ensemble(ExperimentConfig(cipher_spec("tea"), mode, b, DESK_SIZE, DESK_T, 1010)).mean_lambda[-1]
            for b in blocks
        ]
    ok, parts = True, []
    for mode in (C, O, R, P):
        fit = fit_lambda_vs_blocks(zip(blocks, finals[mode]), mode)
        mono = all(x <= y for x, y in zip(finals[mode], finals[mode][1:]))
        ok &= mono and fit.r_squared >= 0.95
        parts.append(f"{mode.value} mono={mono} R2={fit.r_squared:.4f}")
    spread = max(finals[E]) - min(finals[E])
    ok &= spread < 0.05
    assert report(acceptance_report, 10, ok, "; ".join(parts) + f"; ECB spread={spread:.4f} (< 0.05)")


@pytest.mark.skipif(os.environ.get("MODELYAP_FULL") != "1", reason="full scale: set MODELYAP_FULL=1")
def test_criterion_11_full_scale(acceptance_report):
    from modelyap.ensemble import default_jobs

    not_converged, off, worst = [], [], 0.0
    for cid in MANDATORY:
        for mode in ALL_MODES:
            res = run_ensemble(ExperimentConfig(cipher_spec(cid), mode, 5, 200, 200, SEEDS[cid]), jobs=default_jobs())
            lam = res.mean_lambda
            step = abs(lam[-2] - lam[-1])
            if not res.converged:
                not_converged.append(f"{cid}/{mode.value}:{step:.1e}")
            dev = abs(lam[-1] - TABLE_II[cid][mode])
            worst = max(worst, dev)
            if dev > 0.01:
                off.append(f"{cid}/{mode.value}")
            print(f"  {cid:4s} {mode.value:4s} lambda200={lam[-1]:.5f} paper={TABLE_II[cid][mode]:.5f} "
                  f"sigma={res.sigma:.2e} delta={res.delta:.2e} |dlambda|={step:.2e}")
    ok = not not_converged and not off
    detail = (f"Table II max |dev|={worst:.5f} (tol 0.01, {18 - len(off)}/18 within); "
              f"convergence |dlambda|<{CONVERGENCE_TOL} at T: {18 - len(not_converged)}/18"
              + (f" (not: {', '.join(not_converged)})" if not_converged else ""))
    assert report(acceptance_report, 11, ok, detail)


def test_criterion_11_marker(acceptance_report):
    if os.environ.get("MODELYAP_FULL") != "1":
        acceptance_report[11] = "criterion 11: SKIP  full-scale suite not requested (MODELYAP_FULL=1)"


def test_criterion_12_determinism(acceptance_report, tmp_path, long_runs):
    runner = CliRunner()
    args = ["run", "--cipher", "tea", "--ensemble-size", str(DESK_SIZE), "--steps", str(DESK_T), "--seed", "101"]
    for name in ("a", "b"):
        r = runner.invoke(main, args + ["-o", str(tmp_path / name)])
        assert r.exit_code == 0, r.output

    def files(root):
        return {p.relative_to(root): p.read_bytes() for p in root.rglob("*") if p.is_file() and p.name != "manifest.json"}

    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    same_cli = a == b and len(a) > 6 * DESK_SIZE
    again = run_ensemble(long_runs["tea", C].config)
    same_api = again.member_eps == long_runs["tea", C].member_eps and again.to_json() == long_runs["tea", C].to_json()
    ok = same_cli and same_api
    assert report(acceptance_report, 12, ok, f"{len(a)} CLI result files byte-identical={same_cli}; ensemble rerun identical={same_api}")
