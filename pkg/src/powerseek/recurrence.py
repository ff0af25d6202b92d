"""Recurrent states, reach-and-revisit policies and discount thresholds.

A state is recurrent when some stationary policy returns to it with
probability 1, which holds exactly when it lies in an end component.  End
components come from the usual prune-and-split iteration over strongly
connected components.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import networkx as nx

from powerseek._linalg import solve
from powerseek.mdp import (
    MdpError,
    Number,
    Policy,
    TabularMdp,
    hit_probability,
    visit_count,
)

GAMMA_PRECISION = 1e-9
_GAMMA_CEILING = 1 - 1e-9


class RecurrenceError(MdpError):
    pass


@dataclass(frozen=True)
class EndComponent:
    states: frozenset
    actions: dict  # state -> tuple of actions that stay inside the component

    def __contains__(self, s):
        return s in self.states


@dataclass(frozen=True)
class RecurrenceReport:
    recurrent: frozenset
    witnesses: dict  # state -> revisiting Policy
    components: tuple

    def component_of(self, s: int) -> EndComponent:
        for ec in self.components:
            if s in ec:
                return ec
        raise RecurrenceError(f"state {s} is not recurrent")


@dataclass(frozen=True)
class GammaThreshold:
    state: int
    threshold: float
    policy: Policy


def maximal_end_components(mdp: TabularMdp) -> tuple:
    """Maximal end components over non-terminal states, ordered by lowest state."""
    candidates = set(mdp.nonterminal())
    allowed = {s: set(range(mdp.n_actions(s))) for s in candidates}
    while True:
        changed = False
        graph = nx.DiGraph()
        graph.add_nodes_from(candidates)
        for s in candidates:
            for a in allowed[s]:
                graph.add_edges_from((s, n) for n, _ in mdp.transitions[s][a])
        scc_of = {}
        for i, comp in enumerate(nx.strongly_connected_components(graph)):
            for s in comp:
                scc_of[s] = i
        for s in list(candidates):
            keep = {a for a in allowed[s]
                    if all(n in candidates and scc_of.get(n) == scc_of[s]
                           for n, _ in mdp.transitions[s][a])}
            if keep != allowed[s]:
                allowed[s] = keep
                changed = True
        for s in [s for s in candidates if not allowed[s]]:
            candidates.discard(s)
            del allowed[s]
            changed = True
        if not changed:
            break
    groups = {}
    for s in candidates:
        groups.setdefault(scc_of[s], set()).add(s)
    comps = [
        EndComponent(frozenset(g), {s: tuple(sorted(allowed[s])) for s in sorted(g)})
        for g in groups.values()
    ]
    return tuple(sorted(comps, key=lambda ec: min(ec.states)))


def _layered_actions(mdp, region, allowed, target):
    """Pick, per state of ``region``, an allowed action with positive probability
    of moving one layer closer to ``target``.  Returns None if some state of the
    region cannot reach the target this way."""
    choice = {}
    done = {target}
    frontier = True
    while frontier:
        frontier = False
        for s in sorted(region):
            if s in done:
                continue
            for a in allowed[s]:
                if any(n in done for n, _ in mdp.transitions[s][a]):
                    choice[s] = a
                    frontier = True
                    break
        done.update(choice)
    if any(s not in done for s in region):
        return None
    return choice


def _expected_times(mdp, choice, region, target):
    """Expected steps to hit ``target`` from each state of ``region`` under ``choice``."""
    others = sorted(s for s in region if s != target)
    index = {s: i for i, s in enumerate(others)}
    exact = mdp.exact
    one, zero = (Fraction(1), Fraction(0)) if exact else (1.0, 0.0)
    A = [[zero] * len(others) for _ in others]
    for s in others:
        i = index[s]
        A[i][i] += one
        for n, p in mdp.transitions[s][choice[s]]:
            if n in index:
                A[i][index[n]] -= p
    times = solve(A, [one] * len(others), exact) if others else []
    out = {s: times[index[s]] for s in others}
    out[target] = zero
    return out


def _step_cost(mdp, s, a, times):
    return 1 + sum(p * times[n] for n, p in mdp.transitions[s][a])


def _shortest_path_choice(mdp, region, allowed, target):
    """Policy iteration for minimum expected hitting time, starting from a proper
    layered policy.  Ties keep the incumbent action, otherwise the lowest index."""
    choice = _layered_actions(mdp, region, allowed, target)
    if choice is None:
        return None
    while True:
        times = _expected_times(mdp, choice, region, target)
        changed = False
        for s in sorted(choice):
            current = _step_cost(mdp, s, choice[s], times)
            best_a, best = choice[s], current
            for a in allowed[s]:
                c = _step_cost(mdp, s, a, times)
                if c < best:
                    best_a, best = a, c
            if best_a != choice[s]:
                choice[s] = best_a
                changed = True
        if not changed:
            return choice, times


def _to_policy(mdp, choice) -> Policy:
    return tuple(choice.get(s, 0) for s in range(mdp.n_states))


def _revisit_policy(mdp, ec: EndComponent, s: int) -> Policy:
    choice, times = _shortest_path_choice(mdp, ec.states, ec.actions, s)
    # at s itself pick the component action with the shortest expected return
    choice[s] = min(ec.actions[s], key=lambda a: (_step_cost(mdp, s, a, times), a))
    return _to_policy(mdp, choice)


def recurrent_states(mdp: TabularMdp) -> RecurrenceReport:
    def compute():
        comps = maximal_end_components(mdp)
        witnesses = {}
        for ec in comps:
            for s in sorted(ec.states):
                witnesses[s] = _revisit_policy(mdp, ec, s)
        return RecurrenceReport(frozenset(witnesses), witnesses, comps)

    return mdp._memo(("recurrence",), compute)


def almost_sure_winning(mdp: TabularMdp, target: int):
    """States from which some policy reaches ``target`` with probability 1, and
    the actions that keep play inside that set."""
    win = set(range(mdp.n_states))
    while True:
        allowed = {
            s: tuple(a for a in range(mdp.n_actions(s))
                     if all(n in win for n, _ in mdp.transitions[s][a]))
            for s in win
        }
        # backward search from target over allowed edges
        reach = {target}
        queue = deque([target])
        preds = {}
        for s in win:
            if mdp.terminal[s] and s != target:
                continue
            for a in allowed[s]:
                for n, _ in mdp.transitions[s][a]:
                    preds.setdefault(n, set()).add(s)
        while queue:
            n = queue.popleft()
            for s in preds.get(n, ()):
                if s not in reach:
                    reach.add(s)
                    queue.append(s)
        if reach == win:
            return frozenset(win), allowed
        win = reach


def almost_sure_reach_policy(mdp: TabularMdp, start: int, target: int):
    """A policy reaching ``target`` from ``start`` with probability 1, or None.

    Among such policies the one minimizing expected hitting time is returned.
    ``start == target`` is trivially satisfied by the all-zero policy.
    """
    if start == target:
        return tuple(0 for _ in range(mdp.n_states))
    win, allowed = almost_sure_winning(mdp, target)
    if start not in win:
        return None
    choice, _ = _shortest_path_choice(mdp, win, allowed, target)
    return _to_policy(mdp, choice)


def reaching_region(mdp: TabularMdp, policy: Policy, target: int) -> frozenset:
    """States from which ``policy`` hits ``target`` (at some step >= 0) almost surely.

    Graph criterion on the induced chain: no state that cannot reach the
    target is reachable while avoiding the target.
    """
    d = mdp.n_states
    succ = [[n for n, _ in mdp.transitions[s][policy[s]]] if not mdp.terminal[s] else []
            for s in range(d)]
    preds = [[] for _ in range(d)]
    for s in range(d):
        for n in succ[s]:
            preds[n].append(s)
    can = {target}
    queue = deque([target])
    while queue:
        n = queue.popleft()
        for s in preds[n]:
            if s not in can:
                can.add(s)
                queue.append(s)
    doomed = set(range(d)) - can
    # states that can reach a doomed state without first passing the target
    bad = set(doomed)
    queue = deque(doomed)
    while queue:
        n = queue.popleft()
        for s in preds[n]:
            if s not in bad and s != target:
                bad.add(s)
                queue.append(s)
    return frozenset(set(range(d)) - bad)


def reach_and_revisit(mdp: TabularMdp, s_new: int, s_rec: int, *, check: bool = True) -> Policy:
    """Splice a revisiting policy for ``s_rec`` with a policy reaching it from ``s_new``.

    Inside the revisiting policy's reaching region the revisiting policy is
    followed, elsewhere the reaching policy.  With ``check`` both probability-1
    properties are confirmed by linear solves.
    """

    def compute():
        report = recurrent_states(mdp)
        if s_rec not in report.recurrent:
            raise RecurrenceError(f"state {mdp.state_names[s_rec]} is not recurrent")
        revisit = report.witnesses[s_rec]
        region = reaching_region(mdp, revisit, s_rec)
        if s_new in region:
            return revisit
        reach = almost_sure_reach_policy(mdp, s_new, s_rec)
        if reach is None:
            raise RecurrenceError(
                f"state {mdp.state_names[s_rec]} is not almost-surely reachable "
                f"from {mdp.state_names[s_new]}"
            )
        return tuple(revisit[s] if s in region else reach[s] for s in range(mdp.n_states))

    policy = mdp._memo(("reach-revisit", s_new, s_rec), compute)
    if check:
        _require_one(mdp, hit_probability(mdp, policy, s_new, s_rec), "reach", s_new, s_rec)
        _require_one(mdp, hit_probability(mdp, policy, s_rec, s_rec), "revisit", s_rec, s_rec)
    return policy


def _require_one(mdp, p, what, a, b):
    ok = p == 1 if mdp.exact else abs(p - 1) <= 1e-9
    if not ok:
        raise RecurrenceError(
            f"internal error: {what} probability {p} != 1 "
            f"({mdp.state_names[a]} -> {mdp.state_names[b]})"
        )


def gamma_star(mdp: TabularMdp, s_new: int, s_rec: int) -> GammaThreshold:
    """Smallest discount above which the visit count of ``s_rec`` from ``s_new``
    exceeds 1, under the canonical reach-and-revisit policy.  Found by bisection
    to absolute precision 1e-9; 0 when the first step already hits ``s_rec``."""
    policy = reach_and_revisit(mdp, s_new, s_rec)

    def excess(g):
        return float(visit_count(mdp, policy, s_new, s_rec, g)) - 1.0

    if excess(0.0) >= 0:
        return GammaThreshold(s_rec, 0.0, policy)
    lo, hi = 0.0, _GAMMA_CEILING
    if excess(hi) <= 0:
        raise RecurrenceError(
            f"internal error: visit count of {mdp.state_names[s_rec]} never exceeds 1"
        )
    while hi - lo > GAMMA_PRECISION / 4:
        mid = (lo + hi) / 2
        if excess(mid) > 0:
            hi = mid
        else:
            lo = mid
    return GammaThreshold(s_rec, (lo + hi) / 2, policy)


def exceeds_threshold(mdp: TabularMdp, s_new: int, s_rec: int, gamma: Number) -> bool:
    """Whether ``gamma > gamma*`` for ``s_rec``, decided as visit count > 1.

    The visit count is strictly increasing in gamma for a recurrent target, so
    this is the threshold test without bisection error (exact for rational gamma).
    """
    policy = reach_and_revisit(mdp, s_new, s_rec, check=False)
    return visit_count(mdp, policy, s_new, s_rec, gamma) > 1
