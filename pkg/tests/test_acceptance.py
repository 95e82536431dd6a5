"""Acceptance criteria, one test each.

Every test prints a single ``[criterion N] PASS|FAIL`` line (also collected
into the terminal summary) before asserting, so the outcome of all criteria is
visible in one run.
"""
import math
from itertools import product

import numpy as np
import pytest

from urnaudit import (
    CLASSIC,
    CohortConfig,
    SnapshotSpec,
    UrnParameters,
    amplification_report,
    beta_cdf,
    beta_moments,
    enumerate_exact,
    fit_limit_law,
    limit_distribution,
    one_shot_power,
    run_cohort,
    snapshot_validation,
)
from urnaudit.config import load_config
from urnaudit.urn import replay_recursion

from conftest import ACCEPTANCE_LINES, two_group_config


def report(number, passed, detail):
    line = f"[criterion {number}] {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def test_criterion_1_uniform_limit(long_run_endpoints):
    params, endpoints = long_run_endpoints["uniform"]
    fit = fit_limit_law(endpoints, params, significance=0.01)
    ok = fit.passed and fit.threshold == pytest.approx(0.0163)
    report(1, ok, f"k=1, n={fit.sample_size}, T=1000: KS D={fit.statistic:.5f} "
                  f"< {fit.threshold:.4f} vs Uniform(0,1)")
    assert ok


def test_criterion_2_concentrated_limit(long_run_endpoints):
    params, endpoints = long_run_endpoints["concentrated"]
    fit = fit_limit_law(endpoints, params, significance=0.01)
    law = limit_distribution(params)
    target = beta_moments(law)[1]
    variance = float(np.var(endpoints, ddof=1))
    ok_var = abs(variance - 1 / 84) <= 0.1 / 84 and target == pytest.approx(1 / 84)
    ok = fit.passed and ok_var
    report(2, ok, f"k=0.1: KS D={fit.statistic:.5f} vs threshold {fit.threshold:.4f} "
                  f"against Beta(10,10); variance {variance:.6f} vs 1/84={1 / 84:.6f}")
    assert ok


def test_criterion_3_extreme_limit(long_run_endpoints):
    params, endpoints = long_run_endpoints["extreme"]
    fit = fit_limit_law(endpoints, params, significance=0.01)
    law = limit_distribution(params)
    expected = 1 - (beta_cdf(law, 0.8) - beta_cdf(law, 0.2))
    outside = np.mean((endpoints <= 0.2) | (endpoints >= 0.8))
    se = math.sqrt(expected * (1 - expected) / endpoints.size)
    ok_fraction = abs(outside - expected) < 3 * se
    ok = fit.passed and ok_fraction
    report(3, ok, f"k=10: KS D={fit.statistic:.5f} vs threshold {fit.threshold:.4f} against "
                  f"Beta(0.1,0.1) ({'pass' if fit.passed else 'fail'}); outside (0.2,0.8) "
                  f"{outside:.4f} vs {expected:.4f} +- 3x{se:.4f} "
                  f"({'pass' if ok_fraction else 'fail'})")
    assert ok_fraction
    assert fit.passed


def test_criterion_4_martingale(long_run_endpoints):
    details = []
    ok = True
    for name, (params, endpoints) in long_run_endpoints.items():
        se = endpoints.std(ddof=1) / math.sqrt(endpoints.size)
        diff = endpoints.mean() - 0.5
        ok &= abs(diff) < 3 * se
        details.append(f"k={params.increment:g}: {diff:+.5f} (3 SE {3 * se:.5f})")
    report(4, ok, "mean p_T - 0.5: " + "; ".join(details))
    assert ok


def test_criterion_5_oracle_equivalence():
    horizon, n = 6, 1_000_000
    exact = dict(enumerate_exact(CLASSIC, horizon))
    result = run_cohort(CohortConfig(n, horizon, CLASSIC, master_seed=55))
    codes = result.classifications.astype(np.int64) @ (1 << np.arange(horizon - 1, -1, -1))
    counts = np.bincount(codes, minlength=2 ** horizon)
    worst = 0.0
    for seq in product((0, 1), repeat=horizon):
        p = float(exact[seq])
        code = int("".join(map(str, seq)), 2)
        z = abs(counts[code] / n - p) / math.sqrt(p * (1 - p) / n)
        worst = max(worst, z)
    exchangeable = True
    for params in (CLASSIC, UrnParameters(1, 1, 0.1), UrnParameters(1, 1, 10)):
        by_count = {}
        for seq, prob in enumerate_exact(params, 10):
            by_count.setdefault(sum(seq), set()).add(prob)
        exchangeable &= all(len(v) == 1 for v in by_count.values())
    ok = worst < 4 and exchangeable
    report(5, ok, f"T={horizon}, n={n}: max |z| over {2 ** horizon} sequences {worst:.2f} < 4; "
                  f"oracle exchangeable at T=10 for k=1,0.1,10: {exchangeable}")
    assert ok


def test_criterion_6_recursion_matches_counts():
    rng = np.random.default_rng(6)
    worst = 0.0
    for path in range(1000):
        b0, r0, k = np.exp(rng.uniform(math.log(0.1), math.log(10), size=3))
        params = UrnParameters(float(b0), float(r0), float(k))
        result = run_cohort(CohortConfig(2, 200, params, master_seed=path))
        counts = result.scores[0]
        recursion = np.array(replay_recursion(params, result.classifications[0]))
        worst = max(worst, float(np.max(np.abs(recursion - counts) / counts)))
    ok = worst <= 1e-12
    report(6, ok, f"1000 random paths x 200 steps: max relative difference {worst:.2e} <= 1e-12")
    assert ok


def test_criterion_7_one_step_calibration():
    experiment = load_config("validate-one-step")
    assert experiment.cohort.population == 100_000
    assert all(g.bias == 0 for g in experiment.cohort.groups)
    spec = experiment.snapshot
    assert spec.horizon == 1
    result = run_cohort(experiment.cohort)
    rep = snapshot_validation(result, spec)
    worst = max(abs(b.mean_score - b.observed_rate) / b.se for b in rep.per_bin if b.count)
    ok = worst <= 3
    report(7, ok, f"N={rep.population}, t={spec.time}, h=1: max bin |gap|/SE {worst:.2f} <= 3 "
                  f"(calibration gap {rep.calibration_gap:.4f})")
    assert ok


def test_criterion_8_amplification(amplified_cohort):
    spec = SnapshotSpec(time=1, horizon=1, bins=10, threshold=0.5)
    rep = amplification_report(amplified_cohort, spec, resamples=1000, confidence=0.99, seed=8)
    pair = rep.pairs[0]
    study = two_group_config(0.01, 1000, 200, seed=80, record_full_paths=False)
    power = one_shot_power(study, spec, repetitions=200, alpha=0.05)
    ok = pair.amplified and pair.final_gap > pair.snapshot_gap and power < 0.5
    report(8, ok, f"gap t=1 {pair.snapshot_gap:+.4f}, t=200 {pair.final_gap:+.4f}, ratio "
                  f"{pair.ratio:.2f} 99% CI [{pair.ci_lower:.2f}, {pair.ci_upper:.2f}] > 1; "
                  f"one-shot power (500/group, t=1) {power:.3f} < 0.5")
    assert ok


def test_criterion_9_null_soundness(null_cohort):
    spec = SnapshotSpec(time=1, horizon=1, bins=10, threshold=0.5)
    rep = amplification_report(null_cohort, spec, resamples=1000, confidence=0.99, seed=9)
    pair = rep.pairs[0]
    reps, alpha = 200, 0.05
    study = two_group_config(0.0, 1000, 200, seed=90, record_full_paths=False)
    rate = one_shot_power(study, spec, repetitions=reps, alpha=alpha)
    band = 3 * math.sqrt(alpha * (1 - alpha) / reps)
    ok = pair.covers_one and abs(rate - alpha) <= band
    report(9, ok, f"ratio CI [{pair.ci_lower:.2f}, {pair.ci_upper:.2f}] covers 1; detection "
                  f"rate {rate:.3f} within {alpha} +- {band:.3f} over {reps} studies")
    assert ok
