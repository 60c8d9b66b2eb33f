import json
import math

import numpy as np
import pytest
from scipy import special, stats

from modelyap import ensemble
from modelyap.ciphers import cipher_spec, get_cipher, toy_cipher
from modelyap.ensemble import (
    ConfigError,
    ExperimentConfig,
    FitError,
    GenerationError,
    envelope_outlier_rate,
    experiment_summary,
    fit_lambda_vs_blocks,
    generate_dataset,
    load_result,
    mode_pair_tests,
    run_ensemble,
    summarize_curves,
)
from modelyap.lyapunov import PerturbationPolicy, PerturbationSpec
from modelyap.modes import ALL_MODES, ModeId
from modelyap.stats import betainc, paired_t_test, t_sf_two_sided

TEA = cipher_spec("tea")


def cfg(mode="ECB", **kw):
    base = dict(cipher=TEA, mode=mode, b=5, ensemble_size=8, T=12, rng_seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


# -- t-test -----------------------------------------------------------------------------


def test_betainc_against_scipy():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a, b = rng.uniform(0.2, 60, size=2)
        x = rng.uniform()
        assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-12)
    assert betainc(2, 3, 0.0) == 0.0 and betainc(2, 3, 1.0) == 1.0
    with pytest.raises(ValueError):
        betainc(1, 1, 1.5)


def test_t_tail_against_scipy():
    for df in (1, 2, 5, 19, 199):
        for t in (0.0, 0.3, 1.0, 2.093, 5.0, 40.0):
            assert t_sf_two_sided(t, df) == pytest.approx(2 * stats.t.sf(t, df), abs=1e-10)


def test_paired_t_against_scipy():
    rng = np.random.default_rng(1)
    for size in (2, 3, 20, 200):
        for _ in range(20):
            a = rng.normal(3.5, 0.01, size)
            b = a + rng.normal(rng.uniform(-0.01, 0.01), 0.01, size)
            t, p = paired_t_test(a, b)
            ref = stats.ttest_rel(a, b)
            assert t == pytest.approx(ref.statistic, rel=1e-10)
            assert p == pytest.approx(ref.pvalue, abs=1e-8)


def test_paired_t_zero_variance_cases():
    assert paired_t_test([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    t, p = paired_t_test([1, 2, 3], [1.1, 2.1, 3.1])
    assert t == -math.inf and p == 0.0
    t, p = paired_t_test([1.1, 2.1, 3.1], [1, 2, 3])
    assert t == math.inf and p == 0.0


def test_paired_t_symmetry_and_errors():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=15), rng.normal(size=15)
    t1, p1 = paired_t_test(a, b)
    t2, p2 = paired_t_test(b, a)
    assert t1 == -t2 and p1 == p2
    with pytest.raises(ValueError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])


# -- configuration and datasets ------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(b=0)
    with pytest.raises(ConfigError):
        cfg(ensemble_size=1)
    with pytest.raises(ConfigError):
        cfg(T=1)
    with pytest.raises(ValueError):
        cfg(mode="XYZ")
    with pytest.raises(ValueError):
        cfg(perturbation=PerturbationSpec(bit=65))
    c = cfg(mode="cbc")
    assert c.mode is ModeId.CBC
    assert ExperimentConfig.from_dict(json.loads(json.dumps(c.as_dict()))) == c


def test_dataset_deterministic_and_shaped():
    c = cfg(ensemble_size=200)
    a, b = generate_dataset(c), generate_dataset(c)
    assert a == b
    assert len({m.key.value for m in a}) == 200
    assert all(m.plaintext.n_blocks == 5 and m.plaintext.n_cells == 320 for m in a)
    assert all(m.bit == 64 for m in a)
    assert generate_dataset(cfg(ensemble_size=200, rng_seed=4)) != a


def test_dataset_shared_across_modes():
    a = generate_dataset(cfg("ECB"))
    b = generate_dataset(cfg("PCBC"))
    assert [(m.plaintext, m.key) for m in a] == [(m.plaintext, m.key) for m in b]


def test_random_bit_policy():
    members = generate_dataset(cfg(ensemble_size=50, perturbation=PerturbationSpec(policy=PerturbationPolicy.RANDOM_PER_MEMBER)))
    bits = {m.bit for m in members}
    assert len(bits) > 10 and all(1 <= x <= 64 for x in bits)


def test_key_exhaustion_raises():
    # only 16 keys exist for a 4-bit toy cipher
    with pytest.raises(GenerationError):
        generate_dataset(ExperimentConfig(toy_cipher("xor", 4), "ECB", 2, 17, 4, 0))
    assert len(generate_dataset(ExperimentConfig(toy_cipher("xor", 4), "ECB", 2, 16, 4, 0))) == 16


def test_weak_keys_rejected(monkeypatch):
    spec = toy_cipher("fixed-permutation", 6, seed=1)
    cipher = get_cipher(spec)
    monkeypatch.setattr(cipher, "weak_keys", lambda: frozenset(range(60)))
    members = generate_dataset(ExperimentConfig(spec, "ECB", 2, 4, 4, 0))
    assert {m.key.value for m in members} == {60, 61, 62, 63}
    monkeypatch.setattr(cipher, "weak_keys", lambda: frozenset(range(64)))
    with pytest.raises(GenerationError):
        generate_dataset(ExperimentConfig(spec, "ECB", 2, 4, 4, 0))


# -- ensembles ---------------------------------------------------------------------------


def test_run_ensemble_invariants():
    res = run_ensemble(cfg("CBC"))
    final = res.final_lambdas
    assert res.member_curves.shape == (8, 12)
    assert res.sigma >= 0 and res.delta >= 0
    assert final.min() <= res.mean_lambda[-1] <= final.max()
    assert res.delta == pytest.approx(final.max() - final.min())
    assert all(t.bound_holds() for t in res.traces())
    assert res.excluded == []


def test_run_ensemble_deterministic_and_parallel(monkeypatch):
    c = cfg("PCBC")
    a = run_ensemble(c)
    monkeypatch.setattr(ensemble, "_CHUNK_ELEMENTS", 320 * 320 * 3)
    b = run_ensemble(c, jobs=2)
    assert a.member_eps == b.member_eps
    assert np.array_equal(a.mean_lambda, b.mean_lambda)


def test_identical_members_zero_spread():
    curves = np.tile(np.linspace(1, 3, 10), (5, 1))
    mean, sigma, delta = summarize_curves(curves)
    assert sigma == 0.0 and delta == 0.0
    assert np.array_equal(mean, curves[0])


def test_extinct_member_excluded(caplog):
    c = cfg(ensemble_size=3, T=3)
    res = ensemble.aggregate(c, [[2, 4, 8], [1, 0], [3, 9, 27]])
    assert res.kept == [0, 2] and res.excluded == [1]
    assert "excluded" in caplog.text
    assert res.mean_lambda[-1] == pytest.approx((math.log(8) + math.log(27)) / 6)


def test_write_and_reload_reproduces_aggregates(tmp_path):
    res = run_ensemble(cfg("CFB"))
    res.write(tmp_path)
    doc = json.loads((tmp_path / "ensemble.json").read_text())
    again = load_result(tmp_path)
    assert again.member_eps == res.member_eps
    assert doc["sigma"] == again.sigma and doc["delta"] == again.delta
    assert doc["mean_lambda"] == [float(v) for v in again.mean_lambda]
    # recompute from the member CSVs alone
    from modelyap.lyapunov import read_trace_csv

    curves = np.array([read_trace_csv(p)[0] for p in sorted((tmp_path / "members").glob("*.csv"))])
    mean, sigma, delta = summarize_curves(curves)
    assert [float(v) for v in mean] == doc["mean_lambda"]
    assert sigma == doc["sigma"] and delta == doc["delta"]


# -- envelopes, test matrix, regression ------------------------------------------------------


def test_envelope():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(10, 40))
    assert envelope_outlier_rate(a, a) == 1.0
    low = np.full((5, 40), 1.0)
    high = np.full((5, 40), 2.0)
    assert envelope_outlier_rate(low, high) == 0.0
    # deviations inside the transient are ignored
    b = a.copy()
    b[:, :9] = 100.0
    assert envelope_outlier_rate(b, a) == 1.0
    b[0, 20] = 100.0
    assert envelope_outlier_rate(b, a) == 0.9
    with pytest.raises(ValueError):
        envelope_outlier_rate(a, a[:, :30])


def test_fit_exact_log_law():
    pts = [(b, math.log(b * 64)) for b in (2, 4, 8, 12, 16, 20)]
    fit = fit_lambda_vs_blocks(pts, "X")
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.slope == pytest.approx(1.0) and fit.intercept == pytest.approx(math.log(64))
    assert fit.predict(5) == pytest.approx(math.log(320))


def test_fit_flat_and_degenerate():
    flat = fit_lambda_vs_blocks([(2, 3.4), (4, 3.4), (8, 3.4)])
    assert flat.slope == pytest.approx(0.0, abs=1e-12) and 0.0 <= flat.r_squared <= 1.0
    noisy = fit_lambda_vs_blocks([(2, 1.0), (4, 3.0), (8, 0.5), (16, 2.9)])
    assert 0.0 <= noisy.r_squared <= 1.0
    with pytest.raises(FitError):
        fit_lambda_vs_blocks([(2, 1.0), (4, 2.0)])
    with pytest.raises(FitError):
        fit_lambda_vs_blocks([(2, 1.0), (2, 1.5), (4, 2.0)])


def test_summary_has_all_mode_pairs():
    results = {m: run_ensemble(cfg(m, ensemble_size=4, T=6)) for m in ALL_MODES}
    tests = mode_pair_tests(results)
    assert len(tests) == 15
    summary = experiment_summary(results, [fit_lambda_vs_blocks([(2, 1), (4, 2), (8, 3)], "CBC")])
    assert len(summary["envelope_inside_fraction"]) == 30
    assert summary["regression_fits"][0]["mode"] == "CBC"
    json.dumps(summary)
