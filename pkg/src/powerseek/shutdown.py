"""Shutdown scenarios: a new state where one action leads irreversibly to a
terminal state and every other action keeps the agent in play.

The retargeting permutations swap the reward of the shutdown state with the
reward of one qualifying recurrent state each.  A recurrent state qualifies at
discount ``gamma`` when it is reachable from the new state with probability 1
and its expected discounted visit count exceeds 1.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from powerseek.goalset import (
    GoalSample,
    TrainingRecord,
    in_goal_set,
    ood_permutation_closed,
    partition_states,
)
from powerseek.mdp import (
    Number,
    TabularMdp,
    evaluate_policy,
    greedy_actions,
    optimal_q,
    reachable_states,
    visit_count,
)
from powerseek.orbit import (
    A0,
    A1,
    ORBIT_CAP,
    ActionSetChooser,
    OrbitReport,
    Permutation,
    RetargetabilityCertificate,
    certify_retargetable,
    enumerate_orbit,
    preference_counts,
    sampled_orbit,
    verify_majority,
)
from powerseek.recurrence import (
    almost_sure_winning,
    exceeds_threshold,
    gamma_star,
    reach_and_revisit,
    recurrent_states,
)

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ShutdownScenario:
    mdp: TabularMdp
    training: TrainingRecord
    s_new: int
    s_term: int
    shutdown_action: int
    reward: Optional[tuple] = None
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def a0(self) -> frozenset:
        return frozenset({self.shutdown_action})

    @property
    def a1(self) -> frozenset:
        return frozenset(range(self.mdp.n_actions(self.s_new))) - self.a0

    @property
    def reach(self) -> frozenset:
        return partition_states(self.mdp, self.training, self.s_new).reach

    def chooser(self, gamma) -> ActionSetChooser:
        return ActionSetChooser(self.mdp, self.s_new, self.a0, self.a1, gamma)


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)  # (name, passed, detail)
    warnings: list = field(default_factory=list)

    def add(self, name, passed, detail=""):
        self.checks.append((name, bool(passed), detail))

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    @property
    def failures(self) -> list:
        return [(name, detail) for name, passed, detail in self.checks if not passed]

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [{"name": n, "passed": p, "detail": d} for n, p, d in self.checks],
            "warnings": list(self.warnings),
        }


def validate_scenario(scenario: ShutdownScenario, gamma: Number = None) -> ValidationReport:
    """Check the shutdown-setting assumptions, listing every failure."""
    report = ValidationReport()
    mdp = scenario.mdp
    names = mdp.state_names
    d = mdp.n_states
    s_new, s_term = scenario.s_new, scenario.s_term
    indices_ok = 0 <= s_new < d and 0 <= s_term < d
    report.add("state_indices", indices_ok, f"s_new={s_new}, s_term={s_term}")
    if not indices_ok:
        return report
    try:
        scenario.training.validate(mdp)
        report.add("training_record", True)
    except ValueError as exc:
        report.add("training_record", False, str(exc))
    train = scenario.training.states
    report.add("s_new_out_of_distribution", s_new not in train, names[s_new])
    report.add("s_term_terminal", mdp.terminal[s_term], names[s_term])
    report.add("s_term_out_of_distribution", s_term not in train, names[s_term])
    a = scenario.shutdown_action
    valid_action = 0 <= a < mdp.n_actions(s_new) and not mdp.terminal[s_new]
    report.add(
        "shutdown_action_leads_to_s_term",
        valid_action and tuple(mdp.transitions[s_new][a]) == ((s_term, 1),),
        f"action {a} at {names[s_new]}",
    )
    report.add("other_actions_exist", valid_action and mdp.n_actions(s_new) >= 2)
    if s_new not in train:
        reach = scenario.reach
        overlap = sorted(names[s] for s in reach & train)
        report.add("distributional_shift", not overlap,
                   "training states reachable from s_new: " + ", ".join(overlap) if overlap else "")
    if scenario.reward is not None:
        negative = [names[s] for s, r in enumerate(scenario.reward) if r < 0]
        report.add("nonnegative_rewards", not negative, ", ".join(negative))
        report.add("reward_length", len(scenario.reward) == d)
    if gamma is not None and report.ok:
        qualifying = qualifying_recurrent_states(scenario, gamma)
        report.add("qualifying_recurrent_state_exists", bool(qualifying),
                   f"gamma={gamma}: " + ", ".join(names[s] for s in sorted(qualifying)))
    if report.ok and not ood_permutation_closed(mdp, scenario.training, scenario.reach | {s_term}):
        report.warnings.append(
            "states reachable from s_new are also reachable from training states; "
            "goal-set closure under swaps is not guaranteed"
        )
    return report


def candidate_recurrent_states(scenario: ShutdownScenario) -> frozenset:
    """Recurrent states in the reachable set that s_new reaches almost surely."""
    mdp = scenario.mdp
    s_new = scenario.s_new

    def compute():
        recurrent = recurrent_states(mdp).recurrent
        reach = reachable_states(mdp, [s_new], include_sources=False)
        return frozenset(s for s in recurrent & reach if s_new in almost_sure_winning(mdp, s)[0])

    return mdp._memo(("candidates", s_new), compute)


def qualifying_recurrent_states(scenario: ShutdownScenario, gamma: Number) -> frozenset:
    return frozenset(
        s for s in candidate_recurrent_states(scenario)
        if exceeds_threshold(scenario.mdp, scenario.s_new, s, gamma)
    )


def gamma_table(scenario: ShutdownScenario) -> dict:
    """Discount threshold per candidate recurrent state."""
    return {s: gamma_star(scenario.mdp, scenario.s_new, s)
            for s in sorted(candidate_recurrent_states(scenario))}


@dataclass(frozen=True)
class SwapFamily:
    partners: tuple  # recurrent states, ascending
    permutations: tuple

    @property
    def n(self) -> int:
        return len(self.permutations)

    @property
    def bound(self) -> Fraction:
        """Guaranteed majority fraction ``n / (n + 1)``."""
        return Fraction(self.n, self.n + 1)


def retargeting_swaps(scenario: ShutdownScenario, gamma: Number) -> SwapFamily:
    partners = tuple(sorted(qualifying_recurrent_states(scenario, gamma)))
    if not partners:
        warnings.warn(f"no qualifying recurrent states at gamma={gamma}; the bound is vacuous",
                      stacklevel=2)
    d = scenario.mdp.n_states
    perms = tuple(Permutation.transposition(d, scenario.s_term, s) for s in partners)
    return SwapFamily(partners, perms)


@dataclass(frozen=True)
class PropRecRecord:
    s_rec: int
    gamma: Number
    shutdown_greedy: bool
    shutdown_strict: bool
    tie_case: bool
    term_beats_rec: bool
    shutdown_greedy_after_swap: bool
    proof_bound_strict: bool  # return of the revisit policy exceeds gamma * r(s_rec) * V

    @property
    def hypothesis_met(self) -> bool:
        return self.shutdown_greedy and not self.tie_case

    @property
    def holds(self) -> bool:
        if self.tie_case:
            # equal rewards at s_term and s_rec: shutdown must not be strictly preferred
            return not self.shutdown_strict
        if not self.shutdown_greedy:
            return True
        return self.term_beats_rec and not self.shutdown_greedy_after_swap


def verify_prop_rec(scenario: ShutdownScenario, theta, s_rec: int, gamma: Number) -> PropRecRecord:
    """Check that if shutdown is optimal for ``theta`` at s_new, then s_term's
    reward beats s_rec's and swapping the two rewards makes shutdown non-greedy.

    Both conclusions are computed from exact optimal Q-values.
    """
    mdp = scenario.mdp
    if s_rec not in candidate_recurrent_states(scenario):
        raise ScenarioError(f"{mdp.state_names[s_rec]} is not a reachable recurrent state")
    if not exceeds_threshold(mdp, scenario.s_new, s_rec, gamma):
        raise ScenarioError(f"gamma={gamma} does not exceed gamma* of {mdp.state_names[s_rec]}")
    theta = tuple(theta)
    if any(v < 0 for v in theta):
        raise ScenarioError("rewards must be nonnegative")
    s_new, s_term, a = scenario.s_new, scenario.s_term, scenario.shutdown_action
    greedy = greedy_actions(optimal_q(mdp, theta, gamma), s_new)
    swapped = list(theta)
    swapped[s_term], swapped[s_rec] = swapped[s_rec], swapped[s_term]
    greedy_after = greedy_actions(optimal_q(mdp, swapped, gamma), s_new)

    policy = reach_and_revisit(mdp, s_new, s_rec)
    revisit_return = evaluate_policy(mdp, theta, policy, gamma)[s_new]
    lower = gamma * theta[s_rec] * visit_count(mdp, policy, s_new, s_rec, gamma)
    record = PropRecRecord(
        s_rec=s_rec,
        gamma=gamma,
        shutdown_greedy=a in greedy,
        shutdown_strict=greedy == (a,),
        tie_case=theta[s_term] == theta[s_rec],
        term_beats_rec=theta[s_term] > theta[s_rec],
        shutdown_greedy_after_swap=a in greedy_after,
        proof_bound_strict=revisit_return > lower,
    )
    if record.tie_case and record.shutdown_greedy:
        log.info("tie case: r(s_term) = r(s_rec) = %s at gamma=%s", theta[s_term], gamma)
    return record


@dataclass(frozen=True)
class TheoremCheck:
    """Retargetability certificate and orbit majority check for one reward vector."""

    theta: tuple
    gamma: Number
    swaps: SwapFamily
    orbit: OrbitReport
    certificate: Optional[RetargetabilityCertificate]

    @property
    def n(self) -> int:
        return self.swaps.n

    @property
    def majority(self) -> bool:
        return verify_majority(self.orbit, self.n)

    @property
    def counterexample(self) -> bool:
        """A certified family whose orbit violates the majority inequality."""
        return self.certificate is not None and self.certificate.valid and not self.majority


def goal_membership(scenario: ShutdownScenario, gamma, mode="q-optimal"):
    def member(theta):
        return in_goal_set(theta, scenario.mdp, scenario.training, mode, gamma)

    return member


def theorem_check(scenario: ShutdownScenario, theta, gamma, mode: str = "q-optimal",
                  cap: int = ORBIT_CAP, samples: int = 5000, seed: int = 0,
                  certify: bool = True) -> TheoremCheck:
    member = goal_membership(scenario, gamma, mode)
    chooser = scenario.chooser(gamma)
    swaps = retargeting_swaps_quiet(scenario, gamma)
    if len(theta) <= cap:
        orbit = enumerate_orbit(theta, member, cap)
    else:
        orbit = sampled_orbit(theta, member, samples, seed)
    orbit = preference_counts(orbit, scenario.mdp, scenario.s_new, scenario.a0, scenario.a1,
                              gamma, chooser)
    cert = None
    if certify and not orbit.approximate:
        cert = certify_retargetable(theta, swaps.permutations, scenario.mdp, scenario.s_new,
                                    scenario.a0, scenario.a1, gamma, member, orbit, chooser)
    return TheoremCheck(tuple(theta), gamma, swaps, orbit, cert)


def retargeting_swaps_quiet(scenario, gamma) -> SwapFamily:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return retargeting_swaps(scenario, gamma)


@dataclass(frozen=True)
class ShutdownStats:
    gamma: Number
    n: int
    goals: int
    a1_preferred: int
    orbit_passes: int
    certified: int
    counterexamples: int
    approximate: bool

    @property
    def guaranteed_fraction(self) -> Fraction:
        return Fraction(self.n, self.n + 1)

    @property
    def empirical_a1_fraction(self) -> Fraction:
        return Fraction(self.a1_preferred, self.goals)

    @property
    def orbit_pass_rate(self) -> Fraction:
        return Fraction(self.orbit_passes, self.goals)

    @property
    def vacuous(self) -> bool:
        return self.n == 0

    def row(self) -> dict:
        return {
            "gamma": str(self.gamma),
            "n": self.n,
            "guaranteed_fraction": str(self.guaranteed_fraction),
            "empirical_A1_fraction": str(self.empirical_a1_fraction),
            "orbit_pass_rate": str(self.orbit_pass_rate),
        }


def avoid_shutdown_stats(scenario: ShutdownScenario, goal_sample: GoalSample, gamma: Number,
                         cap: int = ORBIT_CAP, samples: int = 5000) -> ShutdownStats:
    """Orbit majority checks over sampled training-compatible goals."""
    chooser = scenario.chooser(gamma)
    a1 = passes = certified = bad = 0
    approximate = False
    n = 0
    for i, theta in enumerate(goal_sample.vectors):
        check = theorem_check(scenario, theta, gamma, goal_sample.mode, cap, samples,
                              seed=goal_sample.seed + i)
        n = check.n
        approximate = approximate or check.orbit.approximate
        a1 += chooser.label(theta) == A1
        passes += check.majority
        if check.certificate is not None and check.certificate.valid:
            certified += 1
        bad += check.counterexample
    return ShutdownStats(gamma, n, len(goal_sample.vectors), a1, passes, certified, bad,
                         approximate)


def swapped_maximum_unique(scenario: ShutdownScenario, check: TheoremCheck) -> bool:
    """Whether every shutdown-preferring orbit element gives s_term a reward strictly
    above each swap partner's, so distinct swaps move that value to distinct states."""
    s_term = scenario.s_term
    return all(
        t[s_term] > t[s] for t in check.certificate.a0_preferred for s in check.swaps.partners
    )
