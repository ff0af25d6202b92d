"""Training records, state partitions and the training-compatible goal set.

A reward vector is training-compatible when every action the trained agent
took on a training state is optimal for it.  "Optimal" has two readings:

``q-optimal`` (default)
    the trained action is greedy for the optimal Q-values of the vector;
``myopic``
    the trained action maximizes the expected reward of the next state.

Ties admit membership in both readings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from powerseek.mdp import (
    Number,
    RewardVector,
    TabularMdp,
    _coerce_theta,
    greedy_actions,
    optimal_q,
    reachable_states,
)

MODES = ("q-optimal", "myopic")
MAX_ATTEMPTS = 10**7
EXACT_GRID = 1000  # exact-mode samples are multiples of r_max / EXACT_GRID


class GoalSetError(ValueError):
    pass


class ClosureWarning(UserWarning):
    """Permuting out-of-distribution rewards may leave the goal set."""


@dataclass(frozen=True)
class TrainingRecord:
    pairs: tuple  # ((state, action), ...)

    def __post_init__(self):
        states = [s for s, _ in self.pairs]
        if len(set(states)) != len(states):
            raise GoalSetError("training record lists a state twice")

    @property
    def states(self) -> frozenset:
        return frozenset(s for s, _ in self.pairs)

    def validate(self, mdp: TabularMdp):
        for s, a in self.pairs:
            if not 0 <= s < mdp.n_states:
                raise GoalSetError(f"training state {s} out of range")
            if not 0 <= a < mdp.n_actions(s):
                raise GoalSetError(f"training action {a} invalid at {mdp.state_names[s]}")


@dataclass(frozen=True)
class StatePartition:
    train: frozenset
    ood: frozenset
    reach: frozenset


@dataclass
class GoalSample:
    vectors: list
    seed: int
    mode: str
    bounds: tuple
    attempts: int
    exact: bool
    gamma: Number = None
    metadata: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return len(self.vectors) / self.attempts if self.attempts else 0.0

    def to_csv(self, path, state_names: Sequence[str]):
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(state_names)
            for v in self.vectors:
                writer.writerow([str(x) for x in v])


def in_goal_set(theta, mdp: TabularMdp, training: TrainingRecord, mode: str = "q-optimal",
                gamma: Number = None) -> bool:
    theta = _coerce_theta(mdp, theta)
    if mode not in MODES:
        raise GoalSetError(f"unknown goal-set mode {mode!r}")
    if not training.pairs:
        return True
    if mode == "myopic":
        for s, a_star in training.pairs:
            expected = [sum(p * theta[n] for n, p in dist) for dist in mdp.transitions[s]]
            best = max(expected)
            if isinstance(best, float):
                if expected[a_star] < best - 1e-9:
                    return False
            elif expected[a_star] < best:
                return False
        return True
    if gamma is None:
        raise GoalSetError("q-optimal membership needs a discount")
    q = optimal_q(mdp, theta, gamma)
    return all(a in greedy_actions(q, s) for s, a in training.pairs)


def frozen_states(mdp: TabularMdp, training: TrainingRecord, mode: str = "q-optimal") -> frozenset:
    """States whose rewards can influence membership.

    Myopic membership only looks one step ahead of the training states;
    q-optimal membership depends on everything reachable from them.
    """
    train = training.states
    if mode == "myopic":
        one_step = {n for s in train for acts in mdp.transitions[s] for n, _ in acts}
        return frozenset(train | one_step)
    return reachable_states(mdp, train) if train else frozenset()


def ood_permutation_closed(mdp, training, states, mode="q-optimal") -> bool:
    """Whether permuting rewards among ``states`` provably keeps vectors in the goal set."""
    return not (set(states) & frozen_states(mdp, training, mode))


def partition_states(mdp: TabularMdp, training: TrainingRecord, s_new: int) -> StatePartition:
    train = training.states
    if s_new in train:
        raise GoalSetError(f"s_new = {mdp.state_names[s_new]} was visited during training")
    ood = frozenset(range(mdp.n_states)) - train
    reach = reachable_states(mdp, [s_new], include_sources=False)
    return StatePartition(train=train, ood=ood, reach=reach)


def _draw(rng: np.random.Generator, d: int, r_max, exact: bool):
    if exact:
        grid = rng.integers(0, EXACT_GRID, size=d, endpoint=True)
        return RewardVector(Fraction(int(k), EXACT_GRID) * r_max for k in grid)
    return RewardVector(float(x) for x in rng.uniform(0.0, float(r_max), size=d))


def sample_goal_set(
    mdp: TabularMdp,
    training: TrainingRecord,
    count: int,
    seed: int,
    mode: str = "q-optimal",
    gamma: Number = None,
    r_max: Number = 1,
    exact: bool = True,
    max_attempts: int = MAX_ATTEMPTS,
) -> GoalSample:
    """Rejection-sample ``count`` goal-set members uniformly from ``[0, r_max]^d``.

    Exact mode draws from the rational grid with spacing ``r_max / 1000`` so the
    accepted vectors can be certified without rounding.  Stops early at
    ``max_attempts``; raises only if nothing at all was accepted.
    """
    if r_max <= 0:
        raise GoalSetError("r_max must be positive")
    if count < 1:
        raise GoalSetError("count must be at least 1")
    training.validate(mdp)
    if exact and not mdp.exact:
        raise GoalSetError("exact sampling needs an MDP with rational probabilities")
    r_max = Fraction(r_max) if exact else float(r_max)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    accepted = []
    attempts = 0
    while len(accepted) < count and attempts < max_attempts:
        attempts += 1
        theta = _draw(rng, mdp.n_states, r_max, exact)
        if in_goal_set(theta, mdp, training, mode, gamma):
            accepted.append(theta)
    if not accepted:
        raise GoalSetError(
            f"no goal-set members in {attempts} attempts; the constraint set may have measure ~0"
        )
    return GoalSample(
        vectors=accepted, seed=seed, mode=mode, bounds=(0, r_max), attempts=attempts,
        exact=exact, gamma=gamma,
    )


def warn_if_not_closed(mdp, training, states, mode="q-optimal"):
    if not ood_permutation_closed(mdp, training, states, mode):
        warnings.warn(
            "some permuted states are reachable from training states; "
            "goal-set closure under their permutation is not guaranteed",
            ClosureWarning,
            stacklevel=2,
        )
        return False
    return True

