"""Reward-vector orbits under state permutations and retargetability certificates.

The orbit of ``theta`` inside an admissible set is the set of distinct
vectors obtained by permuting its entries that pass a membership predicate.
Orbit elements are labelled by which action set the decision rule prefers at a
state: the rule picks uniformly among the greedy actions, so the probability
of an action set is the fraction of greedy actions it contains.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from gmpy2 import mpq

from powerseek._linalg import is_exact
from powerseek.mdp import Number, TabularMdp, greedy_actions, optimal_q

ORBIT_CAP = 10
A1, A0, TIE = "A1", "A0", "tie"


class OrbitError(ValueError):
    pass


@dataclass(frozen=True)
class Permutation:
    """A bijection of state indices acting on vectors by ``(phi . v)[i] = v[mapping[i]]``."""

    mapping: tuple

    def __post_init__(self):
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise OrbitError(f"not a permutation: {self.mapping}")

    @classmethod
    def identity(cls, d: int) -> "Permutation":
        return cls(tuple(range(d)))

    @classmethod
    def transposition(cls, d: int, i: int, j: int) -> "Permutation":
        m = list(range(d))
        m[i], m[j] = m[j], m[i]
        return cls(tuple(m))

    def __call__(self, vector) -> tuple:
        return tuple(vector[j] for j in self.mapping)

    def __len__(self):
        return len(self.mapping)


@dataclass(frozen=True)
class OrbitReport:
    base: tuple
    elements: tuple
    labels: Optional[tuple] = None
    approximate: bool = False

    @property
    def size(self) -> int:
        return len(self.elements)

    def count(self, label: str) -> int:
        if self.labels is None:
            raise OrbitError("orbit has not been labelled")
        return sum(1 for x in self.labels if x == label)

    @property
    def counts(self):
        """``(n_{A1>A0}, n_{A0>A1}, n_tie)``."""
        return self.count(A1), self.count(A0), self.count(TIE)

    def with_label(self, label: str) -> tuple:
        return tuple(e for e, x in zip(self.elements, self.labels) if x == label)

    def summary(self, n: Optional[int] = None) -> dict:
        n1, n0, nt = self.counts
        out = {
            "base": [str(v) for v in self.base],
            "orbit_size": self.size,
            "n_A1_over_A0": n1,
            "n_A0_over_A1": n0,
            "n_tie": nt,
            "approximate": self.approximate,
        }
        if n is not None:
            out["n"] = n
            out["majority_verified"] = verify_majority(self, n)
            out["vacuous"] = n == 0
        return out

    def to_csv(self, path, state_names: Sequence[str]):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(state_names) + ["label"])
            for element, label in zip(self.elements, self.labels or [""] * self.size):
                writer.writerow([str(v) for v in element] + [label])

    def to_json(self, path, n: Optional[int] = None):
        with open(path, "w") as fh:
            json.dump(self.summary(n), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _distinct_permutations(values):
    """Distinct arrangements of ``values`` in lexicographic order."""
    a = sorted(values)
    n = len(a)
    while True:
        yield tuple(a)
        i = n - 2
        while i >= 0 and not a[i] < a[i + 1]:
            i -= 1
        if i < 0:
            return
        j = n - 1
        while not a[i] < a[j]:
            j -= 1
        a[i], a[j] = a[j], a[i]
        a[i + 1:] = reversed(a[i + 1:])


def _hashable(theta) -> tuple:
    # gmpy2 rationals hash and compare like Fractions but an order of magnitude faster
    if is_exact(theta):
        return tuple(mpq(v.numerator, v.denominator) for v in theta)
    return tuple(theta)


def enumerate_orbit(theta, membership: Optional[Callable] = None, cap: int = ORBIT_CAP) -> OrbitReport:
    """All distinct permutations of ``theta`` accepted by ``membership``.

    Exact entries come back as ``gmpy2.mpq``, which compares and hashes equal to
    the corresponding ``Fraction``.
    """
    theta = _hashable(theta)
    if len(theta) > cap:
        raise OrbitError(f"d = {len(theta)} exceeds the enumeration cap of {cap}; use sampled mode")
    elements = tuple(v for v in _distinct_permutations(theta)
                     if membership is None or membership(v))
    return OrbitReport(base=theta, elements=elements)


def sampled_orbit(theta, membership: Optional[Callable] = None, samples: int = 5000,
                  seed: int = 0) -> OrbitReport:
    """Distinct members of the orbit hit by ``samples`` uniform random permutations."""
    theta = _hashable(theta)
    rng = np.random.default_rng(seed)
    seen = {}
    for _ in range(samples):
        perm = rng.permutation(len(theta))
        v = tuple(theta[int(j)] for j in perm)
        if v not in seen:
            seen[v] = membership is None or membership(v)
    elements = tuple(sorted(v for v, ok in seen.items() if ok))
    return OrbitReport(base=theta, elements=elements, approximate=True)


@dataclass
class ActionSetChooser:
    """Labels reward vectors by the decision rule's action-set preference at ``state``."""

    mdp: TabularMdp
    state: int
    a0: frozenset
    a1: frozenset
    gamma: Number
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.a0 = frozenset(self.a0)
        self.a1 = frozenset(self.a1)
        if self.a0 & self.a1:
            raise OrbitError("action sets must be disjoint")

    def probabilities(self, theta):
        greedy = set(greedy_actions(optimal_q(self.mdp, theta, self.gamma), self.state))
        size = len(greedy)
        return Fraction(len(greedy & self.a0), size), Fraction(len(greedy & self.a1), size)

    def label(self, theta) -> str:
        key = tuple(theta)
        if key not in self._cache:
            p0, p1 = self.probabilities(theta)
            self._cache[key] = A1 if p1 > p0 else A0 if p0 > p1 else TIE
        return self._cache[key]


def preference_counts(orbit: OrbitReport, mdp: TabularMdp, s: int, a0, a1, gamma,
                      chooser: Optional[ActionSetChooser] = None) -> OrbitReport:
    chooser = chooser or ActionSetChooser(mdp, s, a0, a1, gamma)
    return replace(orbit, labels=tuple(chooser.label(e) for e in orbit.elements))


def verify_majority(orbit_report: OrbitReport, n: int) -> bool:
    n1, n0, _ = orbit_report.counts
    return n1 >= n * n0


@dataclass(frozen=True)
class ConditionResult:
    checked: int
    counterexamples: tuple

    @property
    def passed(self) -> bool:
        return not self.counterexamples


@dataclass(frozen=True)
class RetargetabilityCertificate:
    phi: tuple
    a0_preferred: tuple  # orbit elements where A0 is strictly preferred
    retargets: ConditionResult
    stays_inside: ConditionResult
    disjoint_images: ConditionResult

    @property
    def n(self) -> int:
        return len(self.phi)

    @property
    def valid(self) -> bool:
        return self.retargets.passed and self.stays_inside.passed and self.disjoint_images.passed

    def transcript(self) -> dict:
        def cond(c):
            return {"checked": c.checked, "passed": c.passed,
                    "counterexamples": [repr(x) for x in c.counterexamples]}

        return {
            "n": self.n,
            "valid": self.valid,
            "orbit_A0_preferred": len(self.a0_preferred),
            "condition_1_retargets": cond(self.retargets),
            "condition_2_stays_inside": cond(self.stays_inside),
            "condition_3_disjoint_images": cond(self.disjoint_images),
        }


def certify_retargetable(theta, phi: Sequence[Permutation], mdp: TabularMdp, s: int, a0, a1,
                         gamma, membership: Optional[Callable] = None,
                         orbit: Optional[OrbitReport] = None,
                         chooser: Optional[ActionSetChooser] = None,
                         max_counterexamples: int = 10) -> RetargetabilityCertificate:
    """Check the three retargetability conditions exhaustively over the orbit.

    Condition 3 is read literally: images of distinct permutations must differ
    for every pair of A0-preferred elements, including an element paired with
    itself.
    """
    chooser = chooser or ActionSetChooser(mdp, s, a0, a1, gamma)
    if orbit is None:
        orbit = enumerate_orbit(theta, membership)
    if orbit.labels is None:
        orbit = preference_counts(orbit, mdp, s, a0, a1, gamma, chooser)
    phi = tuple(phi)
    bad = orbit.with_label(A0)

    c1, c2 = [], []
    checks = 0
    for k, p in enumerate(phi):
        for t in bad:
            image = p(t)
            checks += 1
            if len(c1) < max_counterexamples and chooser.label(image) != A1:
                c1.append((k, t))
            if len(c2) < max_counterexamples and membership is not None and not membership(image):
                c2.append((k, t))

    # equal images from different permutations, found by hashing instead of all pairs
    c3 = []
    owner = {}
    pairs = 0
    for k, p in enumerate(phi):
        for t in bad:
            image = p(t)
            pairs += 1
            prev = owner.setdefault(image, (k, t))
            if prev[0] != k:
                c3.append((prev, (k, t)))
                break
        if c3:
            break

    return RetargetabilityCertificate(
        phi=phi,
        a0_preferred=bad,
        retargets=ConditionResult(checks, tuple(c1)),
        stays_inside=ConditionResult(checks, tuple(c2)),
        disjoint_images=ConditionResult(pairs, tuple(c3)),
    )
