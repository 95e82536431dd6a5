"""One-shot validation studies run on simulated cohorts.

A validation study scores everyone once, at time ``t``, then watches a
lookahead window of ``h`` further assessments.  The "failure" outcome is any
high-risk classification inside the window.  From that it reports the usual
validity metrics (score-band outcome rates, calibration, AUC, group parity).

:func:`amplification_report` puts that snapshot next to the full disparity
curve so a test that passes at ``t`` can be compared with where the groups end
up after ``T`` decisions.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from statistics import NormalDist
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cohort import (
    CohortConfig,
    CohortResult,
    DisparityRecord,
    GroupStat,
    PairGap,
    default_threads,
    disparity_curve,
    run_cohort,
)
from .urn import derive_seed

MIN_POWER_REPETITIONS = 20


@dataclass(frozen=True)
class SnapshotSpec:
    time: int = 1
    horizon: int = 1
    bins: int = 10
    threshold: float = 0.5

    def __post_init__(self):
        if self.time < 1:
            raise ValueError(f"snapshot time must be >= 1, got {self.time}")
        if self.horizon < 1:
            raise ValueError(f"lookahead horizon must be >= 1, got {self.horizon}")
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")

    def check_horizon(self, horizon: int):
        if self.time + self.horizon > horizon:
            raise ValueError(
                f"lookahead exceeds horizon: time {self.time} + lookahead {self.horizon}"
                f" > {horizon} assessments"
            )


@dataclass(frozen=True)
class BinStat:
    lower: float
    upper: float
    count: int
    mean_score: Optional[float]
    observed_rate: Optional[float]
    se: Optional[float]


@dataclass(frozen=True)
class GroupValidation:
    name: str
    count: int
    auc: Optional[float]
    bins: Tuple[BinStat, ...]
    fraction_above: float


@dataclass(frozen=True)
class ValidationReport:
    spec: SnapshotSpec
    population: int
    per_bin: Tuple[BinStat, ...]
    auc: Optional[float]
    calibration_gap: float
    per_group: Tuple[GroupValidation, ...]
    statistical_parity_gap: float
    predictive_parity_gap: float

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ValidationReport":
        return cls(
            spec=SnapshotSpec(**data["spec"]),
            population=data["population"],
            per_bin=tuple(BinStat(**b) for b in data["per_bin"]),
            auc=data["auc"],
            calibration_gap=data["calibration_gap"],
            per_group=tuple(
                GroupValidation(
                    name=g["name"],
                    count=g["count"],
                    auc=g["auc"],
                    bins=tuple(BinStat(**b) for b in g["bins"]),
                    fraction_above=g["fraction_above"],
                )
                for g in data["per_group"]
            ),
            statistical_parity_gap=data["statistical_parity_gap"],
            predictive_parity_gap=data["predictive_parity_gap"],
        )


def auc(scores: Sequence[float], outcomes: Sequence[int]) -> float:
    """Mann-Whitney probability that a positive outscores a negative.

    Ties count one half.  Computed from average ranks, so any strictly
    increasing transform of the scores gives exactly the same value.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and outcomes differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: outcomes contain a single class")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    first_rank = np.cumsum(counts) - counts + 1
    avg_rank = first_rank + (counts - 1) / 2.0
    rank_sum = float(np.sum(avg_rank[inverse][y]))
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _auc_or_none(scores, outcomes) -> Optional[float]:
    try:
        return auc(scores, outcomes)
    except ValueError:
        return None


def _bin_stats(scores: np.ndarray, outcomes: np.ndarray, bins: int) -> Tuple[BinStat, ...]:
    index = np.minimum((scores * bins).astype(np.int64), bins - 1)
    stats = []
    for j in range(bins):
        mask = index == j
        count = int(mask.sum())
        if count:
            mean = float(scores[mask].mean())
            rate = float(outcomes[mask].mean())
            se = math.sqrt(rate * (1.0 - rate) / count)
        else:
            mean = rate = se = None
        stats.append(BinStat(j / bins, (j + 1) / bins, count, mean, rate, se))
    return tuple(stats)


def snapshot_validation(result: CohortResult, spec: SnapshotSpec) -> ValidationReport:
    """Validate scores at ``spec.time`` against outcomes in the next
    ``spec.horizon`` assessments."""
    result.require_full_paths()
    spec.check_horizon(result.horizon)
    t, h = spec.time, spec.horizon
    scores = np.asarray(result.scores[:, t])
    outcomes = np.asarray(result.classifications[:, t:t + h]).any(axis=1)

    per_bin = _bin_stats(scores, outcomes, spec.bins)
    calibration_gap = max(
        (abs(b.mean_score - b.observed_rate) for b in per_bin if b.count), default=0.0
    )

    per_group = []
    for g, name in enumerate(result.group_names):
        mask = result.group_index == g
        group_scores = scores[mask]
        group_outcomes = outcomes[mask]
        per_group.append(GroupValidation(
            name=name,
            count=int(mask.sum()),
            auc=_auc_or_none(group_scores, group_outcomes),
            bins=_bin_stats(group_scores, group_outcomes, spec.bins),
            fraction_above=float(np.mean(group_scores >= spec.threshold)) if mask.any() else 0.0,
        ))

    parity = 0.0
    predictive = 0.0
    for a in range(len(per_group)):
        for b in range(a + 1, len(per_group)):
            ga, gb = per_group[a], per_group[b]
            parity = max(parity, abs(ga.fraction_above - gb.fraction_above))
            for ba, bb in zip(ga.bins, gb.bins):
                if ba.count and bb.count:
                    predictive = max(predictive, abs(ba.observed_rate - bb.observed_rate))

    return ValidationReport(
        spec=spec,
        population=result.population,
        per_bin=per_bin,
        auc=_auc_or_none(scores, outcomes),
        calibration_gap=float(calibration_gap),
        per_group=tuple(per_group),
        statistical_parity_gap=float(parity),
        predictive_parity_gap=float(predictive),
    )


def two_proportion_z(successes_a: int, n_a: int, successes_b: int, n_b: int) -> float:
    """Pooled two-proportion z statistic for ``rate_b - rate_a``.  Zero when
    the pooled rate is degenerate (no variation to test)."""
    pooled = (successes_a + successes_b) / (n_a + n_b)
    variance = pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)
    if variance <= 0.0:
        return 0.0
    return (successes_b / n_b - successes_a / n_a) / math.sqrt(variance)


def detection_outcomes(config: CohortConfig, spec: SnapshotSpec, repetitions: int,
                       alpha: float = 0.05, threads: Optional[int] = None) -> List[Tuple[float, bool]]:
    """Run ``repetitions`` independent one-shot studies.

    Repetition ``r`` simulates ``config`` under master seed
    ``derive_seed(config.master_seed, r)`` up to ``spec.time`` and applies a
    two-sided two-proportion z-test to the above-threshold rates of the two
    groups.  Returns ``(z, rejected)`` per repetition.
    """
    if len(config.groups) != 2:
        raise ValueError(f"one-shot power needs exactly two groups, got {len(config.groups)}")
    if repetitions < MIN_POWER_REPETITIONS:
        raise ValueError(
            f"power estimate unreliable: {repetitions} < {MIN_POWER_REPETITIONS} repetitions"
        )
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if spec.time > config.horizon:
        raise ValueError(f"snapshot time {spec.time} exceeds horizon {config.horizon}")
    critical = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    threads = default_threads() if threads is None else threads

    def one(rep: int) -> Tuple[float, bool]:
        trial = replace(config, master_seed=derive_seed(config.master_seed, rep),
                        horizon=spec.time, record_full_paths=False)
        result = run_cohort(trial, threads=1)
        above = result.endpoints >= spec.threshold
        a = result.group_index == 0
        b = ~a
        z = two_proportion_z(int(above[a].sum()), int(a.sum()), int(above[b].sum()), int(b.sum()))
        return z, abs(z) > critical

    if threads == 1:
        return [one(r) for r in range(repetitions)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(repetitions)))


def one_shot_power(config: CohortConfig, spec: SnapshotSpec, repetitions: int,
                   alpha: float = 0.05, threads: Optional[int] = None) -> float:
    """Share of repeated one-shot studies whose parity test rejects at ``alpha``."""
    outcomes = detection_outcomes(config, spec, repetitions, alpha, threads)
    return sum(rejected for _, rejected in outcomes) / len(outcomes)


@dataclass(frozen=True)
class PairAmplification:
    group_a: str
    group_b: str
    snapshot_gap: float
    final_gap: float
    ratio: float
    ci_lower: float
    ci_upper: float
    confidence: float
    resamples: int

    @property
    def amplified(self) -> bool:
        """Ratio exceeds 1 at the stated confidence."""
        return self.ci_lower > 1.0

    @property
    def covers_one(self) -> bool:
        return self.ci_lower <= 1.0 <= self.ci_upper


@dataclass(frozen=True)
class AmplificationReport:
    snapshot: Optional[ValidationReport]
    curve: Tuple[DisparityRecord, ...]
    pairs: Tuple[PairAmplification, ...]
    one_shot_power: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AmplificationReport":
        curve = tuple(
            DisparityRecord(
                time=r["time"],
                threshold=r["threshold"],
                groups=tuple(GroupStat(**g) for g in r["groups"]),
                pairs=tuple(PairGap(**p) for p in r["pairs"]),
            )
            for r in data["curve"]
        )
        return cls(
            snapshot=ValidationReport.from_dict(data["snapshot"]) if data["snapshot"] else None,
            curve=curve,
            pairs=tuple(PairAmplification(**p) for p in data["pairs"]),
            one_shot_power=data.get("one_shot_power"),
        )


def _ratio(final_gap, snapshot_gap):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.divide(final_gap, snapshot_gap)


def bootstrap_ratio_ci(snap_a: np.ndarray, final_a: np.ndarray, snap_b: np.ndarray,
                       final_b: np.ndarray, resamples: int, confidence: float,
                       rng: np.random.Generator) -> Tuple[float, float]:
    """Percentile CI of ``(final_b - final_a) / (snap_b - snap_a)`` where each
    array flags a defendant being above threshold.

    Resampling defendants with replacement only changes how many fall in each
    of the four (snapshot, final) indicator cells, so each group is resampled
    as one multinomial draw over those cells.
    """
    def cells(snap, final):
        snap = snap.astype(bool)
        final = final.astype(bool)
        return np.array([
            np.sum(~snap & ~final), np.sum(~snap & final),
            np.sum(snap & ~final), np.sum(snap & final),
        ])

    def fractions(counts, n):
        draw = rng.multinomial(n, counts / n, size=resamples)
        return (draw[:, 2] + draw[:, 3]) / n, (draw[:, 1] + draw[:, 3]) / n

    n_a, n_b = snap_a.size, snap_b.size
    s_a, f_a = fractions(cells(snap_a, final_a), n_a)
    s_b, f_b = fractions(cells(snap_b, final_b), n_b)
    ratios = _ratio(f_b - f_a, s_b - s_a)
    ratios = ratios[~np.isnan(ratios)]
    if ratios.size == 0:
        return float("nan"), float("nan")
    tail = (1.0 - confidence) / 2.0
    lower = float(np.quantile(ratios, tail, method="lower"))
    upper = float(np.quantile(ratios, 1.0 - tail, method="higher"))
    return lower, upper


def amplification_report(result: CohortResult, spec: SnapshotSpec, resamples: int = 1000,
                         confidence: float = 0.99, seed: int = 0,
                         one_shot_power: Optional[float] = None) -> AmplificationReport:
    """Snapshot validation at ``spec.time`` next to the disparity at ``T``.

    For each group pair the amplification ratio is the final-time
    statistical-parity gap over the snapshot-time gap, with a bootstrap
    percentile interval.  When the snapshot is taken at ``T`` there is nothing
    to amplify and the ratio is exactly 1.  The snapshot validation is
    omitted (``None``) when its lookahead window does not fit before ``T``.
    """
    result.require_full_paths()
    if len(result.group_names) < 2:
        raise ValueError("amplification needs two or more groups")
    if resamples < 1:
        raise ValueError(f"resamples must be >= 1, got {resamples}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    if spec.time > result.horizon:
        raise ValueError(f"snapshot time {spec.time} exceeds horizon {result.horizon}")
    fits = spec.time + spec.horizon <= result.horizon
    snapshot = snapshot_validation(result, spec) if fits else None
    curve = disparity_curve(result, spec.threshold)
    at_snapshot = curve[spec.time - 1]
    at_final = curve[-1]
    rng = np.random.default_rng(seed)
    snap_above = np.asarray(result.scores[:, spec.time]) >= spec.threshold
    final_above = np.asarray(result.endpoints) >= spec.threshold

    pairs = []
    for snap_pair, final_pair in zip(at_snapshot.pairs, at_final.pairs):
        if spec.time == result.horizon:
            ratio, lower, upper = 1.0, 1.0, 1.0
        else:
            ratio = float(_ratio(final_pair.gap, snap_pair.gap))
            a = result.group_index == result.group_names.index(snap_pair.group_a)
            b = result.group_index == result.group_names.index(snap_pair.group_b)
            lower, upper = bootstrap_ratio_ci(
                snap_above[a], final_above[a], snap_above[b], final_above[b],
                resamples, confidence, rng,
            )
        pairs.append(PairAmplification(
            group_a=snap_pair.group_a,
            group_b=snap_pair.group_b,
            snapshot_gap=snap_pair.gap,
            final_gap=final_pair.gap,
            ratio=ratio,
            ci_lower=lower,
            ci_upper=upper,
            confidence=confidence,
            resamples=resamples,
        ))
    return AmplificationReport(snapshot, tuple(curve), tuple(pairs), one_shot_power)
