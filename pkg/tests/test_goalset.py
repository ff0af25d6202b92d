from fractions import Fraction

import numpy as np
import pytest

from powerseek.goalset import (
    GoalSetError,
    TrainingRecord,
    frozen_states,
    in_goal_set,
    ood_permutation_closed,
    partition_states,
    sample_goal_set,
)
from powerseek.mdp import TabularMdp
from powerseek.scenarios import (
    CoinrunChainSpec,
    classify_coinrun_goal,
    coinrun_goal,
    make_coinrun_chain,
    make_random,
)

F = Fraction
GAMMA = F(9, 10)


def stay_or_move():
    # s0: a0 stays, a1 moves to s1; training says "move"
    mdp = TabularMdp.build([[{0: F(1)}, {1: F(1)}], [{1: F(1)}]])
    return mdp, TrainingRecord(((0, 1),))


def coinrun():
    train, ood = CoinrunChainSpec(5, 4), CoinrunChainSpec(5, 2)
    mdp, training, scenario = make_coinrun_chain(train, ood)
    return train, ood, mdp, training, scenario


def test_training_reward_is_a_member():
    for seed in range(5):
        sc = make_random(seed, 6)
        assert in_goal_set(sc.reward, sc.mdp, sc.training, gamma=F(9, 10))


@pytest.mark.parametrize("mode", ["q-optimal", "myopic"])
def test_all_zero_reward_is_a_member(mode):
    sc = make_random(3, 6)
    assert in_goal_set([0] * 6, sc.mdp, sc.training, mode, GAMMA)


def test_coinrun_both_goal_kinds_are_members():
    train, ood, mdp, training, _ = coinrun()
    for kind in ("coin", "end"):
        theta = coinrun_goal(mdp, train, ood, kind)
        assert in_goal_set(theta, mdp, training, "q-optimal", F(1, 4))
        assert in_goal_set(theta, mdp, training, "myopic")


def test_q_optimal_needs_gamma():
    mdp, training = stay_or_move()
    with pytest.raises(GoalSetError):
        in_goal_set((0, 1), mdp, training)


def test_membership_rejects_contradicting_reward():
    mdp, training = stay_or_move()
    assert not in_goal_set((1, 0), mdp, training, "myopic")
    assert not in_goal_set((1, 0), mdp, training, "q-optimal", GAMMA)
    assert in_goal_set((1, 1), mdp, training, "myopic")  # ties admit


def test_empty_training_accepts_everything():
    mdp, _ = stay_or_move()
    sample = sample_goal_set(mdp, TrainingRecord(()), 200, seed=1)
    assert sample.acceptance_rate == 1.0


@pytest.mark.parametrize("mode", ["myopic", "q-optimal"])
def test_half_square_acceptance(mode):
    mdp, training = stay_or_move()
    sample = sample_goal_set(mdp, training, 10**4, seed=5, mode=mode, gamma=GAMMA,
                             max_attempts=10**4)
    assert sample.attempts == 10**4
    assert abs(sample.acceptance_rate - 0.5) <= 0.02


def test_sampling_is_deterministic():
    sc = make_random(11, 6)
    a = sample_goal_set(sc.mdp, sc.training, 20, seed=9, gamma=GAMMA)
    b = sample_goal_set(sc.mdp, sc.training, 20, seed=9, gamma=GAMMA)
    assert a.vectors == b.vectors and a.attempts == b.attempts
    c = sample_goal_set(sc.mdp, sc.training, 20, seed=10, gamma=GAMMA)
    assert c.vectors != a.vectors


def test_exact_samples_lie_on_grid():
    mdp, training = stay_or_move()
    sample = sample_goal_set(mdp, training, 50, seed=2, mode="myopic", r_max=2)
    for v in sample.vectors:
        assert all(isinstance(x, Fraction) and 0 <= x <= 2 and (x * 500).denominator == 1
                   for x in v)


def test_float_samples():
    mdp, training = stay_or_move()
    sample = sample_goal_set(mdp.as_float(), training, 50, seed=2, mode="myopic", exact=False)
    assert all(isinstance(x, float) for v in sample.vectors for x in v)


def test_coinrun_samples_split_by_behaviour():
    *_, scenario = coinrun()
    sample = sample_goal_set(scenario.mdp, scenario.training, 10**4, seed=0, gamma=F(1, 4),
                             max_attempts=10**4)
    kinds = {classify_coinrun_goal(scenario, t, F(1, 4)) for t in sample.vectors}
    assert {"coin", "end"} <= kinds


def test_goal_sample_csv(tmp_path):
    mdp, training = stay_or_move()
    sample = sample_goal_set(mdp, training, 3, seed=0, mode="myopic")
    sample.to_csv(tmp_path / "g.csv", mdp.state_names)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "s0,s1" and len(lines) == 4


def test_partition_all_trained_rejects_any_start():
    mdp = TabularMdp.build([[{1: F(1)}], [{0: F(1)}]])
    training = TrainingRecord(((0, 0), (1, 0)))
    for s in range(2):
        with pytest.raises(GoalSetError):
            partition_states(mdp, training, s)


def test_partition_coinrun_reach_is_untrained():
    _, _, mdp, training, scenario = coinrun()
    part = partition_states(mdp, training, scenario.s_new)
    assert part.reach and not part.reach & part.train


def test_untrained_component_is_ood():
    mdp = TabularMdp.build([[{1: F(1)}], [{0: F(1)}], [{3: F(1)}], [{2: F(1)}]])
    part = partition_states(mdp, TrainingRecord(((0, 0),)), 2)
    assert {2, 3} <= part.ood
    assert part.reach == {2, 3}


def test_closure_under_ood_permutations():
    sc = make_random(21, 7)
    frozen = frozen_states(sc.mdp, sc.training)
    free = [s for s in range(7) if s not in frozen]
    assert ood_permutation_closed(sc.mdp, sc.training, free)
    sample = sample_goal_set(sc.mdp, sc.training, 10, seed=3, gamma=GAMMA)
    rng = np.random.default_rng(0)
    for theta in sample.vectors:
        shuffled = [int(i) for i in rng.permutation(free)]
        permuted = list(theta)
        for src, dst in zip(free, shuffled):
            permuted[dst] = theta[src]
        assert in_goal_set(permuted, sc.mdp, sc.training, gamma=GAMMA)


def test_training_record_rejects_duplicate_state():
    with pytest.raises(GoalSetError):
        TrainingRecord(((0, 0), (0, 1)))


def test_training_record_validation():
    mdp, _ = stay_or_move()
    with pytest.raises(GoalSetError):
        TrainingRecord(((1, 3),)).validate(mdp)
