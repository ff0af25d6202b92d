"""Tabular MDPs with state rewards: optimal Q-values, policy evaluation, visit counts.

Return convention: the reward of the state entered at step ``t`` is discounted
by ``gamma**t``, so moving into a terminal state ``s`` in one step is worth
``gamma * r(s)``.  Terminal states are absorbing, pay their reward once on
arrival and have continuation value 0.

Visit counts follow the other convention, ``sum_{t>=1} gamma**(t-1) 1[s_t = target]``,
so the first step is undiscounted.

Every routine runs in one of two numeric modes.  Exact mode (Fractions
throughout) is used whenever the MDP probabilities, the rewards and gamma are
all rationals; anything else falls back to floats with a tie tolerance of 1e-9.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from gmpy2 import mpq

from powerseek._linalg import RATIONAL_TYPES, inverse_exact, is_exact, solve, to_fraction

Number = Union[Fraction, float, int]
Policy = tuple  # one action index per state

TIE_TOLERANCE = 1e-9
FLOAT_SUM_TOLERANCE = 1e-12
VI_RESIDUAL = 1e-12
VI_MAX_SWEEPS = 100_000
_CACHE_LIMIT = 20_000


class MdpError(ValueError):
    """Invalid MDP, reward vector, policy or discount."""


@dataclass(frozen=True)
class TabularMdp:
    """A finite MDP.

    ``transitions[s][a]`` is a tuple of ``(next_state, probability)`` pairs with
    positive probabilities.  Terminal states carry a single self-looping action.
    Instances are immutable; solution operators are memoized per instance.
    """

    transitions: tuple
    terminal: tuple
    state_names: tuple = None
    action_names: tuple = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        d = len(self.transitions)
        if d < 1:
            raise MdpError("an MDP needs at least one state")
        if len(self.terminal) != d:
            raise MdpError(f"terminal flags have length {len(self.terminal)}, expected {d}")
        if self.state_names is None:
            object.__setattr__(self, "state_names", tuple(f"s{i}" for i in range(d)))
        if len(self.state_names) != d or len(set(self.state_names)) != d:
            raise MdpError("state names must be unique, one per state")
        if self.action_names is None:
            object.__setattr__(
                self,
                "action_names",
                tuple(tuple(f"a{j}" for j in range(len(acts))) for acts in self.transitions),
            )
        exact = True
        for s, acts in enumerate(self.transitions):
            if len(acts) < 1:
                raise MdpError(f"state {self.state_names[s]} has no actions")
            if len(self.action_names[s]) != len(acts):
                raise MdpError(f"state {self.state_names[s]}: action names do not match actions")
            for a, dist in enumerate(acts):
                if not dist:
                    raise MdpError(f"empty distribution at ({self.state_names[s]}, {a})")
                total = 0
                for nxt, p in dist:
                    if not 0 <= nxt < d:
                        raise MdpError(f"successor {nxt} out of range at ({self.state_names[s]}, {a})")
                    if p <= 0:
                        raise MdpError(f"non-positive probability at ({self.state_names[s]}, {a})")
                    exact = exact and isinstance(p, (Fraction, int))
                    total += p
                if isinstance(total, (Fraction, int)):
                    if total != 1:
                        raise MdpError(
                            f"distribution at ({self.state_names[s]}, {a}) sums to {total}, not 1"
                        )
                elif abs(total - 1) > FLOAT_SUM_TOLERANCE:
                    raise MdpError(f"distribution at ({self.state_names[s]}, {a}) sums to {total!r}")
            if self.terminal[s] and (len(acts) != 1 or tuple(acts[0]) != ((s, 1),)):
                raise MdpError(f"terminal state {self.state_names[s]} must self-loop with probability 1")
        object.__setattr__(self, "_exact", exact)

    @classmethod
    def build(
        cls,
        transitions: Sequence[Sequence[Mapping[int, Number]]],
        terminal: Iterable[int] = (),
        state_names=None,
        action_names=None,
    ) -> "TabularMdp":
        """Build from ``transitions[s][a] = {next: prob}``.

        ``terminal`` lists terminal state indices; their absorbing self-loop is
        added automatically and any transitions given for them are replaced.
        """
        term = set(terminal)
        d = len(transitions)
        packed = []
        names = [] if action_names is None else None
        for s in range(d):
            if s in term:
                packed.append((((s, Fraction(1)),),))
                if names is not None:
                    names.append(("stay",))
                continue
            acts = []
            for dist in transitions[s]:
                acts.append(tuple(sorted((int(n), p) for n, p in dist.items() if p != 0)))
            packed.append(tuple(acts))
            if names is not None:
                names.append(tuple(f"a{j}" for j in range(len(acts))))
        if action_names is not None:
            names = [("stay",) if s in term else tuple(action_names[s]) for s in range(d)]
        return cls(
            transitions=tuple(packed),
            terminal=tuple(s in term for s in range(d)),
            state_names=None if state_names is None else tuple(state_names),
            action_names=tuple(tuple(n) for n in names),
        )

    @property
    def n_states(self) -> int:
        return len(self.transitions)

    @property
    def exact(self) -> bool:
        return self._exact

    def n_actions(self, s: int) -> int:
        return len(self.transitions[s])

    def successors(self, s: int, a: int):
        return self.transitions[s][a]

    def nonterminal(self):
        return [s for s in range(self.n_states) if not self.terminal[s]]

    def state_index(self, name) -> int:
        if isinstance(name, int):
            return name
        try:
            return self.state_names.index(name)
        except ValueError:
            raise MdpError(f"unknown state {name!r}") from None

    def action_index(self, s: int, name) -> int:
        if isinstance(name, int):
            return name
        try:
            return self.action_names[s].index(name)
        except ValueError:
            raise MdpError(f"unknown action {name!r} at state {self.state_names[s]}") from None

    def as_float(self) -> "TabularMdp":
        return TabularMdp(
            transitions=tuple(
                tuple(tuple((n, float(p)) for n, p in dist) for dist in acts)
                for acts in self.transitions
            ),
            terminal=self.terminal,
            state_names=self.state_names,
            action_names=self.action_names,
        )

    def permuted(self, perm: Sequence[int]) -> "TabularMdp":
        """Relabel states so that old state ``perm[i]`` becomes new state ``i``."""
        inv = [0] * len(perm)
        for new, old in enumerate(perm):
            inv[old] = new
        return TabularMdp(
            transitions=tuple(
                tuple(tuple(sorted((inv[n], p) for n, p in dist)) for dist in self.transitions[old])
                for old in perm
            ),
            terminal=tuple(self.terminal[old] for old in perm),
            state_names=tuple(self.state_names[old] for old in perm),
            action_names=tuple(self.action_names[old] for old in perm),
        )

    def _memo(self, key, compute):
        cache = self._cache
        if key not in cache:
            if len(cache) > _CACHE_LIMIT:
                cache.clear()
            cache[key] = compute()
        return cache[key]


class RewardVector(tuple):
    """A nonnegative per-state reward vector ``theta``.

    A tuple subclass, so it hashes and compares by value.  Entries that are all
    rationals put it in exact mode.
    """

    def __new__(cls, entries: Iterable[Number]):
        values = tuple(Fraction(v) if isinstance(v, int) else v for v in entries)
        for v in values:
            if v < 0:
                raise MdpError(f"reward entries must be nonnegative, got {v}")
        return super().__new__(cls, values)

    @property
    def exact(self) -> bool:
        return is_exact(self)

    def permuted(self, perm: Sequence[int]) -> "RewardVector":
        return RewardVector(self[i] for i in perm)

    def swapped(self, i: int, j: int) -> "RewardVector":
        values = list(self)
        values[i], values[j] = values[j], values[i]
        return RewardVector(values)


@dataclass(frozen=True)
class QTable:
    values: tuple  # values[s][a]
    gamma: Number
    exact: bool

    def __getitem__(self, key):
        s, a = key
        return self.values[s][a]

    def row(self, s: int):
        return self.values[s]

    def state_values(self):
        return tuple(max(row) for row in self.values)

    def greedy_policy(self) -> Policy:
        """Lowest-index optimal action per state."""
        return tuple(greedy_actions(self, s)[0] for s in range(len(self.values)))


def _check_gamma(gamma):
    if not 0 <= gamma < 1:
        raise MdpError(f"discount must lie in [0, 1), got {gamma}")


def _coerce_theta(mdp: TabularMdp, theta) -> tuple:
    theta = tuple(theta)
    if len(theta) != mdp.n_states:
        raise MdpError(f"reward vector has length {len(theta)}, MDP has {mdp.n_states} states")
    return theta


def _check_policy(mdp: TabularMdp, policy):
    policy = tuple(policy)
    if len(policy) != mdp.n_states:
        raise MdpError("policy length does not match the number of states")
    for s, a in enumerate(policy):
        if not 0 <= a < mdp.n_actions(s):
            raise MdpError(f"invalid action {a} at state {mdp.state_names[s]}")
    return policy


def _mode(mdp, theta, gamma) -> bool:
    return mdp.exact and is_exact(theta) and isinstance(gamma, RATIONAL_TYPES)


def _chain_matrix(mdp: TabularMdp, policy, zero=0):
    """Row-stochastic matrix of the policy's chain, with terminal rows zeroed."""
    d = mdp.n_states
    P = [[zero] * d for _ in range(d)]
    for s in range(d):
        if mdp.terminal[s]:
            continue
        for n, p in mdp.transitions[s][policy[s]]:
            P[s][n] += p
    return P


def _continuation_system(mdp: TabularMdp, policy, gamma, exact):
    """Matrix ``I - gamma * P * D`` where ``D`` drops terminal successors."""
    d = mdp.n_states
    one, zero = (Fraction(1), Fraction(0)) if exact else (1.0, 0.0)
    P = _chain_matrix(mdp, policy, zero)
    A = [[(one if i == j else zero) - (zero if mdp.terminal[j] else gamma * P[i][j]) for j in range(d)]
         for i in range(d)]
    return A, P


def _value_operator(mdp: TabularMdp, policy, gamma):
    """Exact matrix ``M`` (as gmpy2 rationals) with policy values ``V = M @ r``."""

    def compute():
        A, P = _continuation_system(mdp, policy, gamma, True)
        inv = inverse_exact(A)
        d = mdp.n_states
        gP = [[gamma * x for x in row] for row in P]
        M = [[sum((inv[i][k] * gP[k][j] for k in range(d) if gP[k][j]), Fraction(0))
              for j in range(d)] for i in range(d)]
        # keep only the nonzero entries of each row
        return [tuple((j, mpq(m.numerator, m.denominator)) for j, m in enumerate(row) if m)
                for row in M]

    return mdp._memo(("value-op", policy, gamma), compute)


def _mpq_transitions(mdp):
    def compute():
        return tuple(
            tuple(tuple((n, mpq(p.numerator, p.denominator), mdp.terminal[n]) for n, p in dist)
                  for dist in acts)
            for acts in mdp.transitions
        )

    return mdp._memo(("mpq-transitions",), compute)


def _optimal_q_exact(mdp, theta, gamma) -> QTable:
    r = [mpq(v.numerator, v.denominator) for v in theta]
    g = mpq(gamma.numerator, gamma.denominator)
    d = mdp.n_states
    zero = mpq(0)
    trans = _mpq_transitions(mdp)
    terminal = mdp.terminal
    policy = mdp._cache.get(("last-policy", gamma))
    if policy is None:
        policy = tuple(0 for _ in range(d))
    while True:
        M = _value_operator(mdp, policy, gamma)
        values = [sum((m * r[j] for j, m in row), zero) for row in M]
        # reward plus continuation of entering each state
        entry = [r[n] if terminal[n] else r[n] + values[n] for n in range(d)]
        q = []
        for s in range(d):
            if terminal[s]:
                q.append((zero,))
            else:
                q.append(tuple(g * sum((p * entry[n] for n, p, _ in dist), zero)
                               for dist in trans[s]))
        improved = list(policy)
        changed = False
        for s in range(d):
            row = q[s]
            best = max(row)
            if row[policy[s]] < best:
                improved[s] = row.index(best)
                changed = True
        if not changed:
            break
        policy = tuple(improved)
    mdp._cache[("last-policy", gamma)] = policy
    values = tuple(tuple(to_fraction(v) for v in row) for row in q)
    return QTable(values=values, gamma=gamma, exact=True)


def _float_arrays(mdp):
    def compute():
        d = mdp.n_states
        width = max(mdp.n_actions(s) for s in range(d))
        P = np.zeros((d, width, d))
        valid = np.zeros((d, width), dtype=bool)
        for s in range(d):
            if mdp.terminal[s]:
                valid[s, 0] = True
                continue
            for a, dist in enumerate(mdp.transitions[s]):
                valid[s, a] = True
                for n, p in dist:
                    P[s, a, n] += float(p)
        live = np.array([not t for t in mdp.terminal], dtype=float)
        return P, valid, live

    return mdp._memo(("float-arrays",), compute)


def _optimal_q_float(mdp, theta, gamma) -> QTable:
    P, valid, live = _float_arrays(mdp)
    r = np.asarray([float(v) for v in theta])
    gamma = float(gamma)
    d = mdp.n_states
    V = np.zeros(d)
    for _ in range(VI_MAX_SWEEPS):
        Q = gamma * P @ (r + live * V)
        Q = np.where(valid, Q, -np.inf)
        newV = Q.max(axis=1)
        residual = float(np.max(np.abs(newV - V))) if d else 0.0
        V = newV
        if residual <= VI_RESIDUAL:
            break
    # polish: evaluate the greedy policy exactly and iterate until it is stable
    policy = tuple(int(np.argmax(Q[s])) for s in range(d))
    for _ in range(100):
        V = np.asarray(evaluate_policy(mdp, theta, policy, gamma))
        Q = np.where(valid, gamma * P @ (r + live * V), -np.inf)
        better = tuple(
            int(np.argmax(Q[s])) if Q[s].max() > Q[s, policy[s]] + TIE_TOLERANCE else policy[s]
            for s in range(d)
        )
        if better == policy:
            break
        policy = better
    values = tuple(
        (0.0,) if mdp.terminal[s] else tuple(float(Q[s, a]) for a in range(mdp.n_actions(s)))
        for s in range(d)
    )
    return QTable(values=values, gamma=gamma, exact=False)


def optimal_q(mdp: TabularMdp, theta, gamma) -> QTable:
    """Optimal action values for state rewards ``theta`` at discount ``gamma``.

    Exact mode runs policy iteration on rationals (warm-started from the last
    optimal policy found for this MDP and discount); float mode runs value
    iteration to a residual of 1e-12 and then polishes with policy evaluation.
    """
    _check_gamma(gamma)
    theta = _coerce_theta(mdp, theta)
    if _mode(mdp, theta, gamma):
        gamma = to_fraction(gamma)
        return mdp._memo(("q", theta, gamma), lambda: _optimal_q_exact(mdp, theta, gamma))
    return mdp._memo(("q", theta, gamma), lambda: _optimal_q_float(mdp, theta, gamma))


def greedy_actions(q: QTable, state: int, tie_tolerance: float = TIE_TOLERANCE) -> tuple:
    row = q.values[state]
    best = max(row)
    if q.exact:
        return tuple(a for a, v in enumerate(row) if v == best)
    return tuple(a for a, v in enumerate(row) if v >= best - tie_tolerance)


def evaluate_policy(mdp: TabularMdp, theta, policy, gamma) -> tuple:
    """Per-state discounted return of a deterministic stationary policy."""
    _check_gamma(gamma)
    theta = _coerce_theta(mdp, theta)
    policy = _check_policy(mdp, policy)
    exact = _mode(mdp, theta, gamma)
    if exact:
        gamma = to_fraction(gamma)
        theta = [to_fraction(v) for v in theta]
    else:
        gamma = float(gamma)
        theta = [float(v) for v in theta]
    A, P = _continuation_system(mdp, policy, gamma, exact)
    rhs = [gamma * sum(p * r for p, r in zip(row, theta)) for row in P]
    return tuple(solve(A, rhs, exact))


def visit_counts(mdp: TabularMdp, policy, target: int, gamma) -> tuple:
    """Expected discounted visit counts of ``target`` from every start state."""
    _check_gamma(gamma)
    policy = _check_policy(mdp, policy)
    exact = mdp.exact and isinstance(gamma, RATIONAL_TYPES)
    gamma = to_fraction(gamma) if exact else float(gamma)
    A, P = _continuation_system(mdp, policy, gamma, exact)
    rhs = [row[target] for row in P]
    return tuple(solve(A, rhs, exact))


def visit_count(mdp: TabularMdp, policy, start: int, target: int, gamma) -> Number:
    """``E[sum_{t>=1} gamma**(t-1) 1[s_t = target]]`` from ``start`` under ``policy``."""
    return visit_counts(mdp, policy, target, gamma)[start]


def hit_probabilities(mdp: TabularMdp, policy, target: int) -> tuple:
    """Probability of being in ``target`` at some step ``t >= 1``, from every start.

    Terminal states other than the target absorb with probability 0 of a hit.
    """
    policy = _check_policy(mdp, policy)
    d = mdp.n_states
    exact = mdp.exact
    zero, one = (Fraction(0), Fraction(1)) if exact else (0.0, 1.0)
    P = _chain_matrix(mdp, policy, zero)
    # states with a positive-probability path to target in >= 1 steps
    preds = [[] for _ in range(d)]
    for s in range(d):
        for n in range(d):
            if P[s][n]:
                preds[n].append(s)
    can = set(preds[target])
    queue = deque(can)
    while queue:
        n = queue.popleft()
        if mdp.terminal[n] or n == target:
            continue
        for s in preds[n]:
            if s not in can:
                can.add(s)
                queue.append(s)
    # a path may only continue through non-target, non-terminal states
    live = sorted(can)
    index = {s: i for i, s in enumerate(live)}
    A = [[zero] * len(live) for _ in live]
    b = [zero] * len(live)
    for s in live:
        i = index[s]
        A[i][i] += one
        b[i] = P[s][target]
        for n, i2 in index.items():
            if n != target and not mdp.terminal[n] and P[s][n]:
                A[i][i2] -= P[s][n]
    x = solve(A, b, exact) if live else []
    out = [zero] * d
    for s, i in index.items():
        out[s] = x[i]
    return tuple(out)


def hit_probability(mdp: TabularMdp, policy, start: int, target: int) -> Number:
    return hit_probabilities(mdp, policy, target)[start]


def reachable_states(mdp: TabularMdp, sources: Iterable[int], include_sources: bool = True) -> frozenset:
    """States reachable with positive probability under some policy.

    Without ``include_sources`` a source is reported only when some path of
    one or more steps returns to it.
    """
    sources = list(sources)
    seen = set()
    queue = deque()
    for s in sources:
        for a in range(mdp.n_actions(s)):
            for n, _ in mdp.transitions[s][a]:
                if n not in seen:
                    seen.add(n)
                    queue.append(n)
    while queue:
        s = queue.popleft()
        for acts in mdp.transitions[s]:
            for n, _ in acts:
                if n not in seen:
                    seen.add(n)
                    queue.append(n)
    if include_sources:
        seen.update(sources)
    return frozenset(seen)
