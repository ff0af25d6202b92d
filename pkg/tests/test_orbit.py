import json
from fractions import Fraction

import pytest

from powerseek.orbit import (
    A0,
    A1,
    TIE,
    ActionSetChooser,
    OrbitError,
    OrbitReport,
    Permutation,
    certify_retargetable,
    enumerate_orbit,
    preference_counts,
    sampled_orbit,
    verify_majority,
)
from powerseek.scenarios import LassoSpec, make_lasso
from powerseek.shutdown import retargeting_swaps, swapped_maximum_unique, theorem_check

F = Fraction
GAMMA = F(9, 10)


def test_constant_orbit_is_singleton():
    assert enumerate_orbit((F(1, 2),) * 5).size == 1


def test_distinct_entries_give_full_group():
    assert enumerate_orbit((0, 1, 2)).size == 6


def test_repeated_entries_collapse():
    orbit = enumerate_orbit((0, 0, 1))
    assert orbit.size == 3
    assert set(orbit.elements) == {(0, 0, 1), (0, 1, 0), (1, 0, 0)}


def test_orbit_elements_compare_equal_to_fractions():
    orbit = enumerate_orbit((F(1, 3), F(0)))
    assert (F(0), F(1, 3)) in orbit.elements


def test_membership_filter_only_shrinks():
    theta = (0, 1, 2, 2)
    full = set(enumerate_orbit(theta).elements)
    small = set(enumerate_orbit(theta, lambda v: v[0] <= v[1]).elements)
    smaller = set(enumerate_orbit(theta, lambda v: v[0] <= v[1] and v[3] == 2).elements)
    assert smaller <= small <= full
    assert len(small) < len(full)


def test_cap_enforced():
    with pytest.raises(OrbitError):
        enumerate_orbit(tuple(range(11)))


def test_sampled_orbit_covers_small_orbit():
    orbit = sampled_orbit((0, 1, 2), samples=500, seed=4)
    assert orbit.approximate and orbit.size == 6


def test_permutation_action():
    p = Permutation((2, 0, 1))
    assert p(("a", "b", "c")) == ("c", "a", "b")
    t = Permutation.transposition(4, 1, 3)
    assert t((0, 1, 2, 3)) == (0, 3, 2, 1)


def test_constant_orbit_all_ties():
    sc = make_lasso(LassoSpec(2, 3))
    orbit = preference_counts(enumerate_orbit((0,) * 6), sc.mdp, 0, sc.a0, sc.a1, GAMMA)
    assert orbit.counts == (0, 0, 1)


def test_single_element_with_strict_a1():
    sc = make_lasso(LassoSpec(2, 3))
    orbit = preference_counts(enumerate_orbit((1,) * 6), sc.mdp, 0, sc.a0, sc.a1, GAMMA)
    assert orbit.counts == (1, 0, 0)


def test_lasso_distinct_entries_majority():
    sc = make_lasso(LassoSpec(2, 3))
    theta = (0, 1, 2, 3, 4, 100)  # shutdown wins when 100 sits on s_term
    check = theorem_check(sc, theta, GAMMA)
    n1, n0, _ = check.orbit.counts
    assert check.n == 3 and n0 > 0
    assert n1 >= 3 * n0
    assert check.certificate.valid


@pytest.mark.parametrize("counts,n,want", [((3, 1, 0), 3, True), ((2, 1, 0), 3, False)])
def test_verify_majority(counts, n, want):
    labels = (A1,) * counts[0] + (A0,) * counts[1] + (TIE,) * counts[2]
    report = OrbitReport(base=(), elements=tuple((i,) for i in range(len(labels))), labels=labels)
    assert verify_majority(report, n) is want


def test_empty_family_vacuously_certified():
    sc = make_lasso(LassoSpec(2, 3))
    cert = certify_retargetable((0, 0, 0, 0, 0, 1), [], sc.mdp, 0, sc.a0, sc.a1, GAMMA)
    assert cert.valid and cert.n == 0


def test_identity_family_fails_retargeting():
    sc = make_lasso(LassoSpec(2, 3))
    theta = (0, 0, 0, 0, 0, 1)
    cert = certify_retargetable(theta, [Permutation.identity(6)], sc.mdp, 0, sc.a0, sc.a1, GAMMA)
    assert not cert.retargets.passed
    assert cert.retargets.counterexamples[0] == (0, theta)


def test_two_partners_certified_with_distinct_targets():
    sc = make_lasso(LassoSpec(1, 2))
    swaps = retargeting_swaps(sc, GAMMA)
    assert swaps.partners == (1, 2) and swaps.bound == F(2, 3)
    check = theorem_check(sc, (0, F(1, 4), F(1, 2), 30), GAMMA)
    assert check.certificate.valid and check.certificate.n == 2
    assert check.certificate.disjoint_images.checked > 0
    assert swapped_maximum_unique(sc, check)
    transcript = check.certificate.transcript()
    assert transcript["condition_3_disjoint_images"]["passed"]


def test_condition_three_literal_reading_catches_collisions():
    sc = make_lasso(LassoSpec(1, 2))
    # two copies of the same swap map every element onto the same image
    phi = [Permutation.transposition(4, 3, 1)] * 2
    cert = certify_retargetable((0, 0, 0, 1), phi, sc.mdp, 0, sc.a0, sc.a1, GAMMA)
    assert not cert.disjoint_images.passed


def test_relabelling_preserves_labels():
    sc = make_lasso(LassoSpec(1, 3))
    # swap cycle states c1 and c2 in both the MDP and the reward
    perm = [0, 1, 3, 2, 4]
    theta = (0, F(1, 3), F(1, 7), F(1, 2), F(2, 5))
    moved = sc.mdp.permuted(perm)
    chooser = ActionSetChooser(sc.mdp, 0, sc.a0, sc.a1, GAMMA)
    moved_chooser = ActionSetChooser(moved, 0, sc.a0, sc.a1, GAMMA)
    assert chooser.label(theta) == moved_chooser.label(tuple(theta[i] for i in perm))


def test_report_exports(tmp_path):
    sc = make_lasso(LassoSpec(1, 2))
    check = theorem_check(sc, (0, 0, 0, 1), GAMMA)
    check.orbit.to_csv(tmp_path / "o.csv", sc.mdp.state_names)
    check.orbit.to_json(tmp_path / "o.json", check.n)
    rows = (tmp_path / "o.csv").read_text().splitlines()
    assert rows[0] == "s_new,c0,c1,s_term,label"
    assert len(rows) == 1 + check.orbit.size
    summary = json.loads((tmp_path / "o.json").read_text())
    assert summary["orbit_size"] == 4 and summary["n"] == 2
    assert summary["majority_verified"] and not summary["vacuous"]


def test_chooser_rejects_overlapping_sets():
    sc = make_lasso(LassoSpec(1, 2))
    with pytest.raises(OrbitError):
        ActionSetChooser(sc.mdp, 0, {0}, {0, 1}, GAMMA)
