"""Populations of defendants run through repeated assessments.

Each defendant follows the urn process of :mod:`urnaudit.urn`.  A group may
carry a decision bias ``delta``: every high-risk draw is made against
``clamp(p + delta, 0, 1)`` while the risk level itself keeps updating from the
realized classification.  Nothing else distinguishes groups, so any disparity
that appears between them is produced by the feedback loop.

Time convention: ``t`` counts completed decisions.  The score at time ``t``
is the risk level after ``t`` decisions, so time 0 is the shared starting
probability and time ``T`` is the path endpoint.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .urn import CLASSIC, DefendantTrajectory, UrnParameters, derive_seed, path_uniforms

BLOCK_SIZE = 2048
THREADS_ENV = "URNAUDIT_THREADS"
MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class GroupSpec:
    name: str
    fraction: float = 1.0
    bias: float = 0.0
    initial_override: Optional[UrnParameters] = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("group name must be nonempty")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"group {self.name!r}: fraction must be in (0, 1], got {self.fraction}")
        if not -1.0 < self.bias < 1.0:
            raise ValueError(f"group {self.name!r}: bias must be in (-1, 1), got {self.bias}")


@dataclass(frozen=True)
class CohortConfig:
    population: int
    horizon: int
    params: UrnParameters = CLASSIC
    groups: Tuple[GroupSpec, ...] = (GroupSpec("all"),)
    master_seed: int = 0
    record_full_paths: bool = True

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.population < 2:
            raise ValueError(f"population must be >= 2, got {self.population}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not self.groups:
            raise ValueError("at least one group is required")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError(f"group names must be unique, got {names}")
        total = math.fsum(g.fraction for g in self.groups)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"group fractions must sum to 1, got {total}")
        if not 0 <= self.master_seed <= MAX_SEED:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")

    def params_for(self, group: GroupSpec) -> UrnParameters:
        return group.initial_override or self.params

    def group_bounds(self) -> List[Tuple[int, int]]:
        """Index range of each group: the first ceil(f1*N) defendants go to
        the first group, and so on."""
        bounds = []
        start = 0
        cumulative = 0.0
        for i, g in enumerate(self.groups):
            cumulative += g.fraction
            if i == len(self.groups) - 1:
                stop = self.population
            else:
                stop = min(self.population, math.ceil(cumulative * self.population - 1e-9))
            bounds.append((start, max(start, stop)))
            start = max(start, stop)
        return bounds

    def group_index(self) -> np.ndarray:
        index = np.empty(self.population, dtype=np.int32)
        for g, (start, stop) in enumerate(self.group_bounds()):
            index[start:stop] = g
        return index


@dataclass(frozen=True, eq=False)
class CohortResult:
    """Everything recorded for one cohort run.

    ``scores`` has shape ``(N, T + 1)``: column ``t`` is each defendant's risk
    level after ``t`` decisions.  ``classifications`` has shape ``(N, T)``:
    column ``j`` is decision ``j + 1``.  Both are ``None`` in endpoint-only
    mode; ``endpoints`` (column ``T``) is always kept.
    """

    config: CohortConfig
    seeds: np.ndarray
    group_index: np.ndarray
    endpoints: np.ndarray
    scores: Optional[np.ndarray] = None
    classifications: Optional[np.ndarray] = None

    @property
    def population(self) -> int:
        return self.config.population

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def group_names(self) -> Tuple[str, ...]:
        return tuple(g.name for g in self.config.groups)

    @property
    def has_full_paths(self) -> bool:
        return self.scores is not None

    def group_of(self, defendant: int) -> str:
        return self.config.groups[int(self.group_index[defendant])].name

    def members(self, group: str) -> np.ndarray:
        return np.flatnonzero(self.group_index == self.group_names.index(group))

    def require_full_paths(self):
        if not self.has_full_paths:
            raise ValueError("full paths required: cohort was run with record_full_paths=false")

    def score_at(self, time: int) -> np.ndarray:
        if not 0 <= time <= self.horizon:
            raise ValueError(f"time out of range: {time} not in [0, {self.horizon}]")
        if time == self.horizon:
            return self.endpoints
        self.require_full_paths()
        return self.scores[:, time]

    def score(self, defendant: int, time: int) -> float:
        return float(self.score_at(time)[defendant])

    def trajectory(self, defendant: int) -> DefendantTrajectory:
        self.require_full_paths()
        group = self.config.groups[int(self.group_index[defendant])]
        return DefendantTrajectory(
            params=self.config.params_for(group),
            probabilities=self.scores[defendant, :-1],
            classifications=self.classifications[defendant],
            final_probability=float(self.endpoints[defendant]),
            seed=int(self.seeds[defendant]),
        )

    def trajectories(self) -> Iterator[DefendantTrajectory]:
        for d in range(self.population):
            yield self.trajectory(d)

    def identical(self, other: "CohortResult") -> bool:
        """Bitwise comparison of two runs."""
        def same(a, b):
            if a is None or b is None:
                return a is b
            return a.dtype == b.dtype and np.array_equal(a, b)

        return (
            self.config == other.config
            and same(self.seeds, other.seeds)
            and same(self.group_index, other.group_index)
            and same(self.endpoints, other.endpoints)
            and same(self.scores, other.scores)
            and same(self.classifications, other.classifications)
        )


def apply_bias(p: float, delta: float) -> float:
    return min(max(p + delta, 0.0), 1.0)


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if threads < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    return threads


def _simulate_block(config: CohortConfig, start: int, stop: int, seeds: np.ndarray,
                    group_index: np.ndarray, endpoints: np.ndarray,
                    scores: Optional[np.ndarray], classifications: Optional[np.ndarray]):
    horizon = config.horizon
    n = stop - start
    draws = np.empty((n, horizon))
    for j, d in enumerate(range(start, stop)):
        seed = derive_seed(config.master_seed, d)
        seeds[d] = seed
        draws[j] = path_uniforms(seed, horizon)

    groups = group_index[start:stop]
    group_params = [config.params_for(g) for g in config.groups]
    blue = np.array([float(group_params[g].blue_initial) for g in groups])
    red = np.array([float(group_params[g].red_initial) for g in groups])
    k = np.array([float(group_params[g].increment) for g in groups])
    delta = np.array([g.bias for g in config.groups])[groups]
    biased = bool(np.any(delta != 0.0))

    for t in range(horizon):
        p = blue / (blue + red)
        if scores is not None:
            scores[start:stop, t] = p
        decision_p = np.clip(p + delta, 0.0, 1.0) if biased else p
        x = draws[:, t] < decision_p
        if classifications is not None:
            classifications[start:stop, t] = x
        blue = blue + k * x
        red = red + k * ~x
    p = blue / (blue + red)
    endpoints[start:stop] = p
    if scores is not None:
        scores[start:stop, horizon] = p


def run_cohort(config: CohortConfig, threads: Optional[int] = None) -> CohortResult:
    """Simulate every defendant of ``config``.

    Defendant ``d`` draws from its own stream ``derive_seed(master_seed, d)``,
    so the result is the same for any ``threads``.
    """
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    n, horizon = config.population, config.horizon
    seeds = np.empty(n, dtype=np.uint64)
    group_index = config.group_index()
    endpoints = np.empty(n)
    scores = classifications = None
    if config.record_full_paths:
        scores = np.empty((n, horizon + 1))
        classifications = np.empty((n, horizon), dtype=np.int8)

    blocks = [(s, min(s + BLOCK_SIZE, n)) for s in range(0, n, BLOCK_SIZE)]

    def work(block):
        _simulate_block(config, block[0], block[1], seeds, group_index, endpoints,
                        scores, classifications)

    if threads == 1 or len(blocks) == 1:
        for block in blocks:
            work(block)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, blocks))

    for array in (seeds, group_index, endpoints, scores, classifications):
        if array is not None:
            array.flags.writeable = False
    return CohortResult(config, seeds, group_index, endpoints, scores, classifications)


@dataclass(frozen=True)
class GroupStat:
    name: str
    count: int
    fraction_above: float
    mean_score: float


@dataclass(frozen=True)
class PairGap:
    """Signed gaps ``group_b - group_a`` at one time."""

    group_a: str
    group_b: str
    gap: float
    se: float
    mean_gap: float


@dataclass(frozen=True)
class DisparityRecord:
    time: int
    threshold: float
    groups: Tuple[GroupStat, ...]
    pairs: Tuple[PairGap, ...]

    def pair(self, group_a: str, group_b: str) -> PairGap:
        for pg in self.pairs:
            if (pg.group_a, pg.group_b) == (group_a, group_b):
                return pg
        raise KeyError((group_a, group_b))


def _check_threshold(threshold: float):
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")


def _records(result: CohortResult, times: Sequence[int], threshold: float,
             fractions: np.ndarray, means: np.ndarray) -> List[DisparityRecord]:
    # fractions/means: (groups, len(times))
    names = result.group_names
    counts = np.bincount(result.group_index, minlength=len(names))
    records = []
    for j, t in enumerate(times):
        groups = tuple(
            GroupStat(names[g], int(counts[g]), float(fractions[g, j]), float(means[g, j]))
            for g in range(len(names))
        )
        pairs = []
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                fa, fb = fractions[a, j], fractions[b, j]
                se = math.sqrt(fa * (1 - fa) / counts[a] + fb * (1 - fb) / counts[b]) \
                    if counts[a] and counts[b] else float("nan")
                pairs.append(PairGap(names[a], names[b], float(fb - fa), se,
                                     float(means[b, j] - means[a, j])))
        records.append(DisparityRecord(int(t), threshold, groups, tuple(pairs)))
    return records


def _group_summaries(result: CohortResult, block: np.ndarray, threshold: float):
    # block: (N, m) scores; returns per-group fraction above threshold and mean
    n_groups = len(result.group_names)
    fractions = np.zeros((n_groups, block.shape[1]))
    means = np.zeros((n_groups, block.shape[1]))
    for g in range(n_groups):
        rows = block[result.group_index == g]
        if len(rows):
            # reduce each column as a contiguous 1-D array so one time point
            # gives bitwise the same mean whether computed alone or in a curve
            for j in range(block.shape[1]):
                column = np.ascontiguousarray(rows[:, j])
                fractions[g, j] = np.mean(column >= threshold)
                means[g, j] = np.mean(column)
        else:
            fractions[g] = means[g] = float("nan")
    return fractions, means


def group_disparity(result: CohortResult, time: int, threshold: float) -> DisparityRecord:
    """Per-group share of scores at or above ``threshold`` after ``time``
    decisions, with the pairwise statistical-parity gaps."""
    _check_threshold(threshold)
    if not 1 <= time <= result.horizon:
        raise ValueError(f"time out of range: {time} not in [1, {result.horizon}]")
    block = result.score_at(time)[:, None]
    fractions, means = _group_summaries(result, block, threshold)
    return _records(result, [time], threshold, fractions, means)[0]


def disparity_curve(result: CohortResult, threshold: float) -> List[DisparityRecord]:
    _check_threshold(threshold)
    result.require_full_paths()
    times = list(range(1, result.horizon + 1))
    fractions, means = _group_summaries(result, result.scores[:, 1:], threshold)
    return _records(result, times, threshold, fractions, means)


def with_seed(config: CohortConfig, master_seed: int) -> CohortConfig:
    return replace(config, master_seed=master_seed)
