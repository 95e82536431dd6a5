import math
from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from urnaudit import (
    CLASSIC,
    CohortConfig,
    GroupSpec,
    SnapshotSpec,
    UrnParameters,
    ValidationReport,
    amplification_report,
    auc,
    enumerate_exact,
    one_shot_power,
    run_cohort,
    snapshot_validation,
)
from urnaudit.urn import replay_counts
from urnaudit.validation import (
    AmplificationReport,
    bootstrap_ratio_ci,
    detection_outcomes,
    two_proportion_z,
)

from conftest import two_group_config


def brute_auc(scores, outcomes):
    pos = [s for s, y in zip(scores, outcomes) if y]
    neg = [s for s, y in zip(scores, outcomes) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def exact_window_rates(params, t, h):
    """P(any high-risk decision in t+1..t+h | score after t decisions), exactly."""
    num = defaultdict(Fraction)
    den = defaultdict(Fraction)
    for seq, prob in enumerate_exact(params, t + h):
        score = replay_counts(params.exact(), seq[:t])[-1]
        den[score] += prob
        if any(seq[t:]):
            num[score] += prob
    return {s: num[s] / den[s] for s in den}, den


# AUC

def test_auc_examples():
    assert auc([0.1, 0.9], [0, 1]) == 1.0
    assert auc([0.9, 0.1], [0, 1]) == 0.0
    assert auc([0.5, 0.5, 0.5], [0, 1, 1]) == 0.5
    assert auc([0.2, 0.4, 0.4, 0.8], [0, 0, 1, 1]) == pytest.approx(0.875)
    with pytest.raises(ValueError, match="AUC undefined"):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError, match="AUC undefined"):
        auc([0.1, 0.2], [0, 0])


scored = st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]),
                            st.integers(0, 1)), min_size=2, max_size=60).filter(
    lambda rows: 0 < sum(y for _, y in rows) < len(rows))


@given(scored)
def test_auc_matches_brute_force(rows):
    scores, outcomes = zip(*rows)
    assert auc(scores, outcomes) == pytest.approx(brute_auc(scores, outcomes), abs=1e-12)


@given(scored)
def test_auc_monotone_invariant(rows):
    scores, outcomes = zip(*rows)
    s = np.array(scores)
    assert auc(np.exp(3 * s) + s ** 3, outcomes) == auc(s, outcomes)


def test_auc_against_mann_whitney():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 20, size=500) / 20
    y = rng.random(500) < s
    u = stats.mannwhitneyu(s[y], s[~y]).statistic
    assert auc(s, y) == pytest.approx(u / (y.sum() * (~y).sum()), abs=1e-12)


# exact calibration oracle

def test_one_step_calibration_exact():
    for params in (CLASSIC, UrnParameters(1, 1, Fraction(1, 10)),
                   UrnParameters(2, 1, 10)):
        rates, _ = exact_window_rates(params, 4, 1)
        assert all(rate == score for score, rate in rates.items())


def test_two_step_rate_monotone_exact():
    rates, _ = exact_window_rates(CLASSIC, 5, 2)
    ordered = [rates[s] for s in sorted(rates)]
    assert all(x < y for x, y in zip(ordered, ordered[1:]))
    assert all(rate > score for score, rate in rates.items())


def test_simulated_rates_match_exact_window():
    t, h = 5, 2
    result = run_cohort(CohortConfig(50_000, t + h, master_seed=3))
    rates, _ = exact_window_rates(CLASSIC, t, h)
    scores = result.scores[:, t]
    outcomes = result.classifications[:, t:t + h].any(axis=1)
    for score, rate in rates.items():
        mask = scores == float(score)
        n = mask.sum()
        se = math.sqrt(float(rate) * (1 - float(rate)) / n)
        assert abs(outcomes[mask].mean() - float(rate)) < 4 * se


# snapshot validation

def test_one_step_calibration_within_noise():
    result = run_cohort(CohortConfig(20_000, 10, master_seed=7))
    report = snapshot_validation(result, SnapshotSpec(time=4, horizon=1))
    for b in report.per_bin:
        if b.count:
            se = b.se if b.se > 0 else 1 / b.count
            assert abs(b.mean_score - b.observed_rate) <= 3 * se


def test_two_step_bins_monotone():
    result = run_cohort(CohortConfig(50_000, 10, master_seed=8))
    report = snapshot_validation(result, SnapshotSpec(time=5, horizon=2))
    rates = [b.observed_rate for b in report.per_bin if b.count]
    assert all(x < y for x, y in zip(rates, rates[1:]))
    assert report.auc > 0.5


def test_identical_groups_parity():
    result = run_cohort(two_group_config(0.0, 40_000, 8, seed=11))
    spec = SnapshotSpec(time=5, horizon=1)
    report = snapshot_validation(result, spec)
    ga, gb = report.per_group
    f = (ga.fraction_above + gb.fraction_above) / 2
    assert report.statistical_parity_gap < 3 * math.sqrt(f * (1 - f) * (1 / ga.count + 1 / gb.count))
    for ba, bb in zip(ga.bins, gb.bins):
        if ba.count and bb.count:
            se = math.hypot(ba.se, bb.se)
            assert abs(ba.observed_rate - bb.observed_rate) <= 3 * se + 1e-12


def test_report_fields():
    result = run_cohort(two_group_config(0.05, 2000, 6, seed=12))
    spec = SnapshotSpec(time=3, horizon=2, bins=5)
    report = snapshot_validation(result, spec)
    assert len(report.per_bin) == 5
    assert sum(b.count for b in report.per_bin) == 2000
    assert [g.name for g in report.per_group] == ["reference", "shifted"]
    assert 0 <= report.statistical_parity_gap <= 1
    assert report.calibration_gap == max(
        abs(b.mean_score - b.observed_rate) for b in report.per_bin if b.count)
    assert ValidationReport.from_dict(report.as_dict()) == report


def test_snapshot_errors():
    short = run_cohort(CohortConfig(100, 5, master_seed=1))
    with pytest.raises(ValueError, match="lookahead exceeds horizon"):
        snapshot_validation(short, SnapshotSpec(time=4, horizon=2))
    lean = run_cohort(CohortConfig(100, 5, master_seed=1, record_full_paths=False))
    with pytest.raises(ValueError, match="full paths required"):
        snapshot_validation(lean, SnapshotSpec(time=1, horizon=1))
    with pytest.raises(ValueError):
        SnapshotSpec(time=0)


# one-shot power

def test_two_proportion_z_against_scipy():
    z = two_proportion_z(40, 100, 55, 100)
    p = (40 + 55) / 200
    expected = (0.55 - 0.40) / math.sqrt(p * (1 - p) * 2 / 100)
    assert z == pytest.approx(expected)
    assert two_proportion_z(0, 10, 0, 10) == 0.0


def power_approximation(delta, per_group, alpha):
    se = math.sqrt(2 * 0.25 / per_group)
    crit = stats.norm.ppf(1 - alpha / 2)
    shift = delta / se
    return stats.norm.cdf(-crit + shift) + stats.norm.cdf(-crit - shift)


def test_small_bias_one_shot_power():
    config = two_group_config(0.01, 1000, 200, seed=21, record_full_paths=False)
    reps = 200
    power = one_shot_power(config, SnapshotSpec(time=1), reps)
    expected = power_approximation(0.01, 500, 0.05)
    assert expected == pytest.approx(0.0615, abs=1e-3)
    assert abs(power - expected) < 3 * math.sqrt(expected * (1 - expected) / reps)
    assert power < 0.5


def test_large_bias_always_detected():
    config = two_group_config(0.2, 20_000, 5, seed=22, record_full_paths=False)
    assert one_shot_power(config, SnapshotSpec(time=1), 20) == 1.0


def test_power_errors_and_determinism():
    config = two_group_config(0.0, 200, 3, seed=23)
    with pytest.raises(ValueError, match="power estimate unreliable"):
        one_shot_power(config, SnapshotSpec(time=1), 19)
    single = CohortConfig(200, 3)
    with pytest.raises(ValueError, match="two groups"):
        one_shot_power(single, SnapshotSpec(time=1), 20)
    a = detection_outcomes(config, SnapshotSpec(time=2), 25, threads=1)
    b = detection_outcomes(config, SnapshotSpec(time=2), 25, threads=4)
    assert a == b


# amplification

def test_ratio_is_one_when_snapshot_is_final():
    result = run_cohort(two_group_config(0.1, 1000, 1, seed=31))
    report = amplification_report(result, SnapshotSpec(time=1, horizon=1))
    assert report.snapshot is None
    assert [p.ratio for p in report.pairs] == [1.0]
    assert len(report.curve) == 1


def test_bootstrap_matches_index_resampling():
    rng = np.random.default_rng(5)
    n = 400
    snap_a = rng.random(n) < 0.5
    final_a = np.where(rng.random(n) < 0.8, snap_a, ~snap_a)
    snap_b = rng.random(n) < 0.65
    final_b = np.where(rng.random(n) < 0.9, snap_b, rng.random(n) < 0.9)
    lo, hi = bootstrap_ratio_ci(snap_a, final_a, snap_b, final_b, 4000, 0.9,
                                np.random.default_rng(1))
    naive = []
    for _ in range(4000):
        ia = rng.integers(0, n, n)
        ib = rng.integers(0, n, n)
        num = final_b[ib].mean() - final_a[ia].mean()
        den = snap_b[ib].mean() - snap_a[ia].mean()
        if den != 0:
            naive.append(num / den)
    nlo, nhi = np.quantile(naive, [0.05, 0.95])
    width = nhi - nlo
    assert abs(lo - nlo) < 0.1 * width
    assert abs(hi - nhi) < 0.1 * width


def test_amplification_determinism_and_round_trip():
    result = run_cohort(two_group_config(0.05, 4000, 30, seed=32))
    spec = SnapshotSpec(time=1, horizon=1)
    a = amplification_report(result, spec, resamples=200, seed=3)
    b = amplification_report(result, spec, resamples=200, seed=3)
    assert a == b
    assert AmplificationReport.from_dict(a.as_dict()) == a
    pair = a.pairs[0]
    assert pair.ratio == pytest.approx(pair.final_gap / pair.snapshot_gap)


def test_amplification_needs_groups_and_paths():
    with pytest.raises(ValueError):
        amplification_report(run_cohort(CohortConfig(100, 5)), SnapshotSpec())
    lean = run_cohort(two_group_config(0.0, 100, 5, seed=1, record_full_paths=False))
    with pytest.raises(ValueError, match="full paths required"):
        amplification_report(lean, SnapshotSpec())


def test_three_groups_all_pairs():
    groups = (GroupSpec("a", 0.4), GroupSpec("b", 0.3, 0.05), GroupSpec("c", 0.3, 0.1))
    result = run_cohort(CohortConfig(3000, 20, groups=groups, master_seed=33))
    report = amplification_report(result, SnapshotSpec(), resamples=100)
    assert [(p.group_a, p.group_b) for p in report.pairs] == [("a", "b"), ("a", "c"), ("b", "c")]
