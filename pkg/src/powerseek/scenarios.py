"""Generators for shutdown scenarios: lassos, a CoinRun-style chain, random MDPs."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from powerseek.goalset import TrainingRecord
from powerseek.mdp import TabularMdp, greedy_actions, optimal_q
from powerseek.shutdown import (
    ShutdownScenario,
    candidate_recurrent_states,
    validate_scenario,
)

MAX_GENERATION_ATTEMPTS = 10**5
RANDOM_STATE_CAP = 10


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LassoSpec:
    """``m`` deterministic steps from s_new to s_rec, which sits on an ``L``-cycle."""

    m: int
    L: int
    reward: Optional[tuple] = None

    def __post_init__(self):
        if self.m < 1 or self.L < 1:
            raise ValueError("lasso needs m >= 1 and L >= 1")


def lasso_states(m: int, L: int) -> dict:
    """Indices of the named lasso states."""
    return {"s_new": 0, "s_rec": m, "s_term": m + L, "cycle": tuple(range(m, m + L))}


def lasso_visit_count(m: int, L: int, gamma):
    """Closed form ``gamma**(m-1) / (1 - gamma**L)`` for the visit count of s_rec."""
    return gamma ** (m - 1) / (1 - gamma**L)


def make_lasso(spec: LassoSpec) -> ShutdownScenario:
    """States: s_new, the m-1 path states, the L cycle states (s_rec first), s_term.

    s_new has actions ``go`` (index 0) and ``shutdown`` (index 1).
    """
    m, L = spec.m, spec.L
    d = m + L + 1
    s_rec, s_term = m, m + L
    T = [None] * d
    T[0] = [{1: Fraction(1)}, {s_term: Fraction(1)}]
    for i in range(1, m):
        T[i] = [{i + 1: Fraction(1)}]
    for k in range(L):
        T[m + k] = [{m + (k + 1) % L: Fraction(1)}]
    T[s_term] = []
    names = ["s_new"] + [f"p{i}" for i in range(1, m)] + [f"c{k}" for k in range(L)] + ["s_term"]
    action_names = [("go", "shutdown")] + [("next",)] * (d - 2) + [("stay",)]
    mdp = TabularMdp.build(T, [s_term], names, action_names)
    reward = tuple(Fraction(0) for _ in range(d)) if spec.reward is None else tuple(spec.reward)
    return ShutdownScenario(mdp, TrainingRecord(()), 0, s_term, 1, reward, name=f"lasso-{m}-{L}")


@dataclass(frozen=True)
class CoinrunChainSpec:
    """A 1-D level of ``length`` cells; the coin sits at ``coin``, the agent starts at ``start``."""

    length: int
    coin: int
    start: int = 0

    def __post_init__(self):
        if self.length < 2:
            raise ValueError("level needs at least 2 cells")
        if not 0 <= self.coin < self.length:
            raise ValueError(f"coin position {self.coin} outside level of length {self.length}")
        if not 0 <= self.start < self.length - 1:
            raise ValueError(f"start position {self.start} must lie before the end cell")


LEFT, RIGHT, SHUTDOWN = 0, 1, 2


def make_coinrun_chain(train: CoinrunChainSpec, ood: CoinrunChainSpec, gamma=Fraction(9, 10)):
    """A training level with the coin at the end and a test level with the coin moved.

    Cells are states ``train_i`` and ``ood_i``; the last cell of each level is
    terminal.  Coin cells in the test level are ordinary states, so an agent can
    walk past the coin.  The test start carries an extra ``shutdown`` action.
    The training record holds the rightward moves of the agent trained on the
    coin reward.
    """
    if train.coin != train.length - 1:
        raise ValueError("the training coin must sit at the end of the level")
    if ood.coin == ood.length - 1:
        raise ValueError("the test coin must be moved away from the end")
    Lt, Lo = train.length, ood.length
    d = Lt + Lo + 1
    off = Lt
    s_term = d - 1
    T = [None] * d
    action_names = [None] * d
    for base, L in ((0, Lt), (off, Lo)):
        for i in range(L - 1):
            T[base + i] = [{base + max(i - 1, 0): Fraction(1)}, {base + i + 1: Fraction(1)}]
            action_names[base + i] = ("left", "right")
        T[base + L - 1] = []
        action_names[base + L - 1] = ("stay",)
    s_new = off + ood.start
    T[s_new] = T[s_new] + [{s_term: Fraction(1)}]
    action_names[s_new] = ("left", "right", "shutdown")
    T[s_term] = []
    action_names[s_term] = ("stay",)
    names = [f"train_{i}" for i in range(Lt)] + [f"ood_{i}" for i in range(Lo)] + ["shutdown"]
    mdp = TabularMdp.build(T, [Lt - 1, off + Lo - 1, s_term], names, action_names)

    coin_reward = coinrun_goal(mdp, train, ood, "coin")
    q = optimal_q(mdp, coin_reward, gamma)
    pairs = []
    for i in range(train.start, Lt - 1):
        assert RIGHT in greedy_actions(q, i)
        pairs.append((i, RIGHT))
    scenario = ShutdownScenario(mdp, TrainingRecord(tuple(pairs)), s_new, s_term, SHUTDOWN,
                                coin_reward, name="coinrun-chain",
                                meta={"coin": off + ood.coin, "end": off + Lo - 1})
    return mdp, scenario.training, scenario


def coinrun_goal(mdp: TabularMdp, train: CoinrunChainSpec, ood: CoinrunChainSpec, kind: str):
    """Reward 1 on the training coin/end cell and on the test level's coin or end cell."""
    off = train.length
    target = off + (ood.coin if kind == "coin" else ood.length - 1)
    reward = [Fraction(0)] * mdp.n_states
    reward[train.length - 1] = Fraction(1)
    reward[target] = Fraction(1)
    return tuple(reward)


def greedy_rollout(scenario: ShutdownScenario, theta, gamma, max_steps: int = 1000) -> list:
    """States visited by the lowest-index greedy policy of a deterministic MDP from s_new,
    until a terminal state or the first repeated state."""
    mdp = scenario.mdp
    policy = optimal_q(mdp, theta, gamma).greedy_policy()
    path = [scenario.s_new]
    seen = {scenario.s_new}
    s = scenario.s_new
    for _ in range(max_steps):
        dist = mdp.transitions[s][policy[s]]
        if len(dist) != 1:
            raise ValueError("rollout needs deterministic transitions")
        s = dist[0][0]
        path.append(s)
        if mdp.terminal[s] or s in seen:
            break
        seen.add(s)
    return path


def classify_coinrun_goal(scenario: ShutdownScenario, theta, gamma) -> str:
    """``end``, ``coin``, ``shutdown`` or ``other`` by where the greedy policy settles."""
    path = greedy_rollout(scenario, theta, gamma)
    last = path[-1]
    if last == scenario.meta["end"]:
        return "end"
    if last == scenario.s_term:
        return "shutdown"
    cycle = path[path.index(last):]
    return "coin" if scenario.meta["coin"] in cycle else "other"


def _random_distribution(rng, pool: Sequence[int], branching: int):
    k = min(branching, len(pool))
    succ = sorted(int(x) for x in rng.choice(pool, size=k, replace=False))
    weights = [int(w) for w in rng.integers(1, 4, size=k)]
    total = sum(weights)
    return {s: Fraction(w, total) for s, w in zip(succ, weights)}


def make_random(seed: int, d: int, actions: int = 2, branching: int = 2, terminal_count: int = 1,
                gamma=Fraction(9, 10), require_recurrent: bool = True) -> ShutdownScenario:
    """A seeded random shutdown scenario with ``d`` states.

    States split into a training block and an out-of-distribution block with no
    transitions between them, so s_new never reaches a training state.  Each
    non-terminal state draws 1..``actions`` actions with up to ``branching``
    successors inside its block; s_new gets one extra shutdown action.  The
    training record is the greedy policy of a random training reward at
    ``gamma``.  Candidates failing validation (or, with ``require_recurrent``,
    lacking an almost-surely reachable recurrent state) are redrawn.
    """
    if not 4 <= d <= RANDOM_STATE_CAP:
        raise ValueError(f"d must lie in [4, {RANDOM_STATE_CAP}]")
    if terminal_count < 1 or terminal_count > d - 3:
        raise ValueError("terminal_count must leave room for s_new and a training state")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    for attempt in range(1, MAX_GENERATION_ATTEMPTS + 1):
        scenario = _random_candidate(rng, d, actions, branching, terminal_count, gamma)
        if scenario is None or not validate_scenario(scenario).ok:
            continue
        if require_recurrent and not candidate_recurrent_states(scenario):
            continue
        scenario.meta.update(seed=seed, attempts=attempt)
        return scenario
    raise GenerationError(f"no valid scenario in {MAX_GENERATION_ATTEMPTS} attempts")


def _random_candidate(rng, d, actions, branching, terminal_count, gamma):
    order = [int(x) for x in rng.permutation(d)]
    s_new, s_term = order[0], order[1]
    rest = order[2:]
    n_train = int(rng.integers(1, len(rest)))  # leave at least one extra OOD state
    train_block = rest[:n_train]
    ood_block = [s_new, s_term] + rest[n_train:]
    extra_terminals = set(int(x) for x in rng.choice(rest, size=terminal_count - 1, replace=False)) \
        if terminal_count > 1 else set()
    terminals = {s_term} | extra_terminals
    T = [None] * d
    for block in (train_block, ood_block):
        for s in block:
            if s in terminals:
                T[s] = []
                continue
            k = int(rng.integers(1, actions + 1))
            T[s] = [_random_distribution(rng, block, branching) for _ in range(k)]
    shutdown_action = int(rng.integers(0, len(T[s_new]) + 1))
    T[s_new].insert(shutdown_action, {s_term: Fraction(1)})
    mdp = TabularMdp.build(T, sorted(terminals))
    train_reward = tuple(Fraction(int(x), 10) for x in rng.integers(0, 11, size=d))
    q = optimal_q(mdp, train_reward, gamma)
    pairs = tuple((s, q.greedy_policy()[s]) for s in sorted(train_block) if not mdp.terminal[s])
    if not pairs:
        return None
    return ShutdownScenario(mdp, TrainingRecord(pairs), s_new, s_term, shutdown_action,
                            train_reward, name="random", meta={})


def random_mdp(seed: int, d: int, actions: int = 2, branching: int = 2, terminal_prob: float = 0.2):
    """A plain random MDP (no scenario structure) for recurrence cross-checks."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    terminals = [s for s in range(d) if rng.random() < terminal_prob]
    T = []
    for s in range(d):
        if s in terminals:
            T.append([])
            continue
        k = int(rng.integers(1, actions + 1))
        T.append([_random_distribution(rng, list(range(d)), int(rng.integers(1, branching + 1)))
                  for _ in range(k)])
    return TabularMdp.build(T, terminals)

