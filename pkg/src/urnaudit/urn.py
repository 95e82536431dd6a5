"""Single-defendant reinforced scoring process and its urn representation.

A defendant's probability of a high-risk classification is updated after every
decision as a weighted average of the previous probability and the realized
classification.  The same process is a generalized Pólya urn: ``blue`` mass is
high-risk, ``red`` mass is low-risk, and each draw adds ``increment`` mass of the
drawn colour.

Masses are real numbers so non-integer increments (e.g. ``k = 0.1``) are
representable.  Every function here is written against plain arithmetic, so
passing :class:`fractions.Fraction` values gives exact results; floats give the
fast Monte Carlo path.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np

Real = Union[int, float, Fraction]

MAX_ENUMERATION_HORIZON = 20


def _is_finite_positive(value) -> bool:
    try:
        return value > 0 and value != float("inf")
    except TypeError:
        return False


def _plain(value: Real):
    if isinstance(value, Fraction):
        return value.numerator if value.denominator == 1 else float(value)
    return value


class Classification(IntEnum):
    LOW_RISK = 0
    HIGH_RISK = 1


@dataclass(frozen=True)
class UrnParameters:
    """Initial composition and reinforcement increment of one process."""

    blue_initial: Real = 1
    red_initial: Real = 1
    increment: Real = 1

    def __post_init__(self):
        for name in ("blue_initial", "red_initial"):
            value = getattr(self, name)
            if not _is_finite_positive(value):
                raise ValueError(f"invalid urn composition: {name}={value!r} must be > 0")
        if not _is_finite_positive(self.increment):
            raise ValueError(f"invalid urn increment: increment={self.increment!r} must be > 0")

    @property
    def total_initial(self) -> Real:
        return self.blue_initial + self.red_initial

    def exact(self) -> "UrnParameters":
        """Same parameters with every field converted to an exact Fraction."""
        return UrnParameters(
            Fraction(self.blue_initial), Fraction(self.red_initial), Fraction(self.increment)
        )

    def as_dict(self) -> dict:
        return {
            "blue_initial": _plain(self.blue_initial),
            "red_initial": _plain(self.red_initial),
            "increment": _plain(self.increment),
        }


CLASSIC = UrnParameters(1, 1, 1)


@dataclass(frozen=True)
class UrnState:
    blue: Real
    red: Real
    step: int = 0

    @classmethod
    def initial(cls, params: UrnParameters) -> "UrnState":
        return cls(params.blue_initial, params.red_initial, 0)

    @property
    def total(self) -> Real:
        return self.blue + self.red


@dataclass(frozen=True, eq=False)
class DefendantTrajectory:
    """Full path of one simulated defendant.

    ``probabilities[i]`` is the probability used for decision ``i + 1`` and
    ``classifications[i]`` is that decision.  ``final_probability`` is the
    risk level after the last decision, i.e. the path endpoint.
    """

    params: UrnParameters
    probabilities: np.ndarray
    classifications: np.ndarray
    final_probability: float
    seed: int

    def __post_init__(self):
        if len(self.probabilities) != len(self.classifications):
            raise ValueError("probabilities and classifications differ in length")

    def __len__(self) -> int:
        return len(self.probabilities)

    @property
    def horizon(self) -> int:
        return len(self.probabilities)

    def same_path(self, other: "DefendantTrajectory") -> bool:
        return (
            self.params == other.params
            and self.seed == other.seed
            and np.array_equal(self.probabilities, other.probabilities)
            and np.array_equal(self.classifications, other.classifications)
            and self.final_probability == other.final_probability
        )


def initial_probability(params: UrnParameters) -> Real:
    """Probability of a high-risk first decision, ``B0 / (B0 + R0)``."""
    if not (_is_finite_positive(params.blue_initial) and _is_finite_positive(params.red_initial)):
        raise ValueError("invalid urn composition")
    return params.blue_initial / params.total_initial


def classic_gamma(i: int) -> Fraction:
    """The ``i / (i + 1)`` weight of the one-ball/one-ball/one-increment urn.

    Defined for ``i >= 1``; at ``i = 1`` this is the first-encounter weight
    1/2.  For other parameterizations use :func:`gamma_weight`.
    """
    if i < 1:
        raise ValueError("classic weight is defined for i >= 1")
    return Fraction(i, i + 1)


def gamma_weight(i: int, params: UrnParameters) -> Real:
    """Weight kept on the previous probability when computing ``p_i``.

    ``n_{i-2} / (n_{i-2} + k)`` with ``n_j = n0 + j*k``.  Only defined from
    the second decision onward.
    """
    if i < 2:
        raise ValueError("weight undefined before second decision")
    mass = params.total_initial + (i - 2) * params.increment
    return mass / (mass + params.increment)


def update_probability(p_prev: Real, x_prev: int, i: int, params: UrnParameters) -> Real:
    gamma = gamma_weight(i, params)
    value = gamma * p_prev + (1 - gamma) * x_prev
    # floating rounding can leave the unit interval by one ulp
    return min(max(value, 0), 1)


def counts_to_probability(state: UrnState) -> Real:
    return state.blue / (state.blue + state.red)


def step(state: UrnState, params: UrnParameters, draw: float) -> Tuple[UrnState, Classification]:
    """Draw one ball.  ``draw < blue / total`` selects blue (high risk)."""
    k = params.increment
    if draw < counts_to_probability(state):
        return UrnState(state.blue + k, state.red, state.step + 1), Classification.HIGH_RISK
    return UrnState(state.blue, state.red + k, state.step + 1), Classification.LOW_RISK


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit seed of stream ``index`` under ``master_seed``.

    Streams are spawned children of ``SeedSequence(master_seed)``, so every
    index gets an independent stream that does not depend on how many other
    streams exist or the order they are generated in.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(seq.generate_state(1, np.uint64)[0])


def path_uniforms(seed: int, horizon: int) -> np.ndarray:
    """Uniform draws in [0, 1) consumed by a path with this seed.

    Prefix-stable: the first ``t`` draws do not depend on ``horizon``.
    """
    return np.random.default_rng(seed).random(horizon)


def simulate_path(params: UrnParameters, horizon: int, seed: int) -> DefendantTrajectory:
    if horizon < 1:
        raise ValueError("empty horizon")
    draws = path_uniforms(seed, horizon)
    state = UrnState.initial(params)
    probabilities = np.empty(horizon)
    classifications = np.empty(horizon, dtype=np.int8)
    for i, u in enumerate(draws):
        probabilities[i] = counts_to_probability(state)
        state, classifications[i] = step(state, params, u)
    probabilities.flags.writeable = False
    classifications.flags.writeable = False
    return DefendantTrajectory(
        params=params,
        probabilities=probabilities,
        classifications=classifications,
        final_probability=float(counts_to_probability(state)),
        seed=seed,
    )


def replay_recursion(params: UrnParameters, classifications: Sequence[int]) -> List[Real]:
    """Probabilities ``p_1 .. p_{T+1}`` obtained from the weighted-average
    recursion alone, given the realized classifications."""
    probs = [initial_probability(params)]
    for i, x in enumerate(classifications, start=2):
        probs.append(update_probability(probs[-1], int(x), i, params))
    return probs


def replay_counts(params: UrnParameters, classifications: Sequence[int]) -> List[Real]:
    """Probabilities ``p_1 .. p_{T+1}`` read off the ball counts."""
    state = UrnState.initial(params)
    probs = [counts_to_probability(state)]
    k = params.increment
    for x in classifications:
        if x:
            state = UrnState(state.blue + k, state.red, state.step + 1)
        else:
            state = UrnState(state.blue, state.red + k, state.step + 1)
        probs.append(counts_to_probability(state))
    return probs


def _walk(state: UrnState, k: Fraction, depth: int, prefix: tuple, weight: Fraction
          ) -> Iterator[Tuple[Tuple[int, ...], Fraction]]:
    if depth == 0:
        yield prefix, weight
        return
    p = state.blue / (state.blue + state.red)
    yield from _walk(UrnState(state.blue + k, state.red, state.step + 1), k, depth - 1,
                     prefix + (1,), weight * p)
    yield from _walk(UrnState(state.blue, state.red + k, state.step + 1), k, depth - 1,
                     prefix + (0,), weight * (1 - p))


def enumerate_exact(params: UrnParameters, horizon: int) -> List[Tuple[Tuple[int, ...], Fraction]]:
    """Every classification sequence of length ``horizon`` with its exact
    probability, by walking the full decision tree in rational arithmetic."""
    if horizon < 1:
        raise ValueError("empty horizon")
    if horizon > MAX_ENUMERATION_HORIZON:
        raise ValueError(
            f"enumeration infeasible: horizon {horizon} > {MAX_ENUMERATION_HORIZON}"
        )
    exact = params.exact()
    return list(_walk(UrnState.initial(exact), exact.increment, horizon, (), Fraction(1)))
