"""Seeded verification suites for the retargetability results.

Each suite returns a :class:`SuiteResult`; an exception is a concrete
counterexample to the checked statement.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from powerseek.goalset import sample_goal_set
from powerseek.mdp import hit_probability, visit_count
from powerseek.orbit import A0
from powerseek.recurrence import gamma_star, reach_and_revisit, recurrent_states
from powerseek.scenarios import LassoSpec, make_lasso, make_random, random_mdp
from powerseek.seeding import derive_seed
from powerseek.shutdown import (
    candidate_recurrent_states,
    qualifying_recurrent_states,
    theorem_check,
    verify_prop_rec,
)

GAMMA_GRID = tuple(Fraction(k, 10) for k in range(1, 10))


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    exceptions: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.exceptions and self.cases > 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = ", ".join(f"{k}={v}" for k, v in sorted(self.details.items()))
        return f"{status} {self.name}: {self.cases} cases, {len(self.exceptions)} exceptions" + (
            f" ({extra})" if extra else "")


def _pick_gamma(scenario, preferred):
    """First discount from ``preferred`` with at least one qualifying recurrent state."""
    for g in preferred:
        if qualifying_recurrent_states(scenario, g):
            return g
    return None


def _informative_goal(scenario, vectors, gamma):
    """First goal whose orbit has a shutdown-preferring element, judged by moving
    its largest entry onto s_term; falls back to the first goal."""
    chooser = scenario.chooser(gamma)
    for theta in vectors:
        moved = list(theta)
        top = max(range(len(moved)), key=lambda s: moved[s])
        moved[top], moved[scenario.s_term] = moved[scenario.s_term], moved[top]
        if chooser.label(moved) == A0:
            return theta
    return vectors[0]


def theorem_majority_suite(count: int = 50, seed: int = 0, sizes=(5, 6, 7),
                           candidates: int = 20) -> SuiteResult:
    """Certified swap families imply the orbit majority inequality.

    Per scenario, up to ``candidates`` goals are sampled and one whose orbit
    contains shutdown-preferring vectors is preferred, so the inequality is
    exercised rather than holding trivially.
    """
    result = SuiteResult("orbit-majority")
    certified = nontrivial = 0
    gammas = (Fraction(3, 4), Fraction(9, 10), Fraction(19, 20), Fraction(99, 100))
    for i in range(count):
        d = sizes[i % len(sizes)]
        scenario = make_random(derive_seed(seed, "thm", i), d)
        rotated = gammas[i % 3:] + gammas[:i % 3]
        gamma = _pick_gamma(scenario, rotated)
        sample = sample_goal_set(scenario.mdp, scenario.training, candidates,
                                 derive_seed(seed, "goal", i), gamma=gamma)
        theta = _informative_goal(scenario, sample.vectors, gamma)
        check = theorem_check(scenario, theta, gamma)
        result.cases += 1
        if check.certificate.valid:
            certified += 1
            nontrivial += check.orbit.counts[1] > 0
        if check.counterexample:
            result.exceptions.append({"index": i, "gamma": str(gamma), "counts": check.orbit.counts,
                                      "n": check.n})
    result.details.update(certified=certified, orbits_with_shutdown_preferred=nontrivial)
    return result


def prop_rec_suite(count: int = 100, seed: int = 0) -> SuiteResult:
    """Shutdown optimal before the swap implies r(s_term) > r(s_rec) and shutdown non-greedy after."""
    result = SuiteResult("swap-retargets")
    met = ties = 0
    i = 0
    while result.cases < count:
        rng = np.random.default_rng(derive_seed(seed, "prop", i))
        scenario = make_random(derive_seed(seed, "prop-scenario", i), int(rng.integers(4, 8)))
        i += 1
        candidates = sorted(candidate_recurrent_states(scenario))
        s_rec = candidates[int(rng.integers(len(candidates)))]
        g_star = gamma_star(scenario.mdp, scenario.s_new, s_rec).threshold
        gamma = Fraction(math.floor(g_star * 100) + int(rng.integers(1, 6)), 100)
        if gamma >= 1:
            continue
        d = scenario.mdp.n_states
        theta = [Fraction(int(x), 10) for x in rng.integers(0, 11, size=d)]
        if rng.random() < 0.5:
            theta[scenario.s_term] = Fraction(int(rng.integers(10, 60)), 10)
        if rng.random() < 0.1:
            theta[scenario.s_term] = theta[s_rec] = Fraction(0)
        record = verify_prop_rec(scenario, theta, s_rec, gamma)
        result.cases += 1
        met += record.hypothesis_met
        ties += record.tie_case and record.shutdown_greedy
        if not record.holds:
            result.exceptions.append({"index": i - 1, "gamma": str(gamma), "s_rec": s_rec,
                                      "theta": [str(v) for v in theta]})
    result.details.update(hypothesis_met=met, tie_cases=ties)
    return result


def _poly_root(m: int, L: int) -> float:
    """Root in (0, 1) of ``g**(m-1) + g**L - 1`` by bisection on the polynomial."""
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if mid ** (m - 1) + mid**L - 1 > 0:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


def gamma_star_suite(tol: float = 1e-6) -> SuiteResult:
    result = SuiteResult("gamma-threshold")
    cases = [(m, L) for m in range(1, 5) for L in range(1, 5)]
    for m, L in cases:
        sc = make_lasso(LassoSpec(m, L))
        got = gamma_star(sc.mdp, sc.s_new, m).threshold
        want = 0.0 if m == 1 else _poly_root(m, L)
        result.cases += 1
        ok = got == 0.0 if m == 1 else abs(got - want) <= tol
        if not ok:
            result.exceptions.append({"m": m, "L": L, "got": got, "want": want})
    return result


def visit_count_suite(terms: int = 500) -> SuiteResult:
    result = SuiteResult("visit-count")
    for m in range(1, 5):
        for L in range(1, 5):
            sc = make_lasso(LassoSpec(m, L))
            policy = reach_and_revisit(sc.mdp, sc.s_new, m)
            for k in range(1, 10):
                g = k / 10
                got = float(visit_count(sc.mdp, policy, sc.s_new, m, g))
                closed = g ** (m - 1) / (1 - g**L)
                partial = sum(g ** (t - 1) for t in range(m, terms + 1, L))
                result.cases += 1
                if abs(got - closed) > 1e-9 or abs(got - partial) > 1e-6:
                    result.exceptions.append({"m": m, "L": L, "gamma": g, "got": got})
    return result


def brute_force_recurrent(mdp) -> frozenset:
    """Recurrent states by enumerating every deterministic stationary policy."""
    found = set()
    live = mdp.nonterminal()
    for choice in itertools.product(*(range(mdp.n_actions(s)) for s in range(mdp.n_states))):
        for s in live:
            if s not in found and hit_probability(mdp, choice, s, s) == 1:
                found.add(s)
    return frozenset(found)


def recurrence_suite(count: int = 200, seed: int = 0) -> SuiteResult:
    result = SuiteResult("recurrence-oracle")
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, "rec-size", i))
        mdp = random_mdp(derive_seed(seed, "rec", i), int(rng.integers(1, 5)), actions=2,
                         branching=2)
        result.cases += 1
        got = recurrent_states(mdp).recurrent
        want = brute_force_recurrent(mdp)
        if got != want:
            result.exceptions.append({"index": i, "got": sorted(got), "want": sorted(want)})
    return result


def reach_revisit_suite(count: int = 50, seed: int = 0) -> SuiteResult:
    result = SuiteResult("reach-and-revisit")
    for i in range(count):
        sc = make_random(derive_seed(seed, "rr", i), 4 + i % 4)
        for s_rec in sorted(candidate_recurrent_states(sc)):
            policy = reach_and_revisit(sc.mdp, sc.s_new, s_rec, check=False)
            reach = hit_probability(sc.mdp, policy, sc.s_new, s_rec)
            back = hit_probability(sc.mdp, policy, s_rec, s_rec)
            result.cases += 1
            if reach != 1 or back != 1:
                result.exceptions.append({"index": i, "s_rec": s_rec, "reach": str(reach),
                                          "revisit": str(back)})
    return result


def monotonicity_suite(count: int = 30, seed: int = 0) -> SuiteResult:
    """Visit counts, qualifying sets and the guaranteed fraction grow with the discount."""
    result = SuiteResult("monotonicity")
    for i in range(count):
        sc = make_random(derive_seed(seed, "mono", i), 4 + i % 4)
        candidates = sorted(candidate_recurrent_states(sc))
        for s_rec in candidates:
            policy = reach_and_revisit(sc.mdp, sc.s_new, s_rec, check=False)
            counts = [visit_count(sc.mdp, policy, sc.s_new, s_rec, g) for g in GAMMA_GRID]
            result.cases += 1
            if any(b < a for a, b in zip(counts, counts[1:])):
                result.exceptions.append({"index": i, "s_rec": s_rec, "kind": "visit-count"})
        sets = [qualifying_recurrent_states(sc, g) for g in GAMMA_GRID + (Fraction(999, 1000),)]
        fractions = [Fraction(len(s), len(s) + 1) for s in sets]
        result.cases += 1
        if any(not a <= b for a, b in zip(sets, sets[1:])) or fractions != sorted(fractions):
            result.exceptions.append({"index": i, "kind": "qualifying-set"})
        thresholds = [gamma_star(sc.mdp, sc.s_new, s).threshold for s in candidates]
        if max(thresholds) < 0.999 and sets[-1] != frozenset(candidates):
            result.exceptions.append({"index": i, "kind": "limit"})
    return result


def run_all(seed: int = 0, quick: bool = False) -> list:
    scale = 5 if quick else 1
    return [
        theorem_majority_suite(50 // scale, seed),
        prop_rec_suite(100 // scale, seed),
        gamma_star_suite(),
        visit_count_suite(),
        recurrence_suite(200 // scale, seed),
        reach_revisit_suite(50 // scale, seed),
        monotonicity_suite(30 // scale, seed),
    ]
