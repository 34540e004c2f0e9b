from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dusl.baselines import (
    ArmPosterior,
    MabState,
    arm_to_move,
    mab_step,
    move_to_arm,
    random_policy,
    run_mab,
    run_random,
)
from dusl.core import ActiveSets, InstanceDims
from dusl.exceptions import ConfigurationError
from dusl.oracle import ExplicitDistribution, best_deterministic
from dusl.scenario import explicit_scenario, make_balanced


def _brute_force_thompson(post: ArmPosterior, rng) -> int:
    """Draw every arm's Beta sample and take the argmax."""
    a = np.ones(post.n_arms)
    b = np.ones(post.n_arms)
    for arm, (s, f) in post.counts.items():
        a[arm] += s
        b[arm] += f
    return int(np.argmax(rng.beta(a, b)))


def test_arm_encoding():
    assert arm_to_move(5, 4).tolist() == [1, 0, 1, 0]
    assert move_to_arm([1, 0, 1, 0]) == 5


@given(st.integers(1, 12), st.data())
def test_encoding_round_trip(M, data):
    arm = data.draw(st.integers(0, 2**M - 1))
    assert move_to_arm(arm_to_move(arm, M)) == arm


def test_update_counters():
    post = ArmPosterior(3)
    post.update(4, 1)
    post.update(4, 0)
    post.update(4, 1)
    post.update(2, 0)
    assert post.counters(4) == (2, 1) and post.counters(2) == (0, 1) and post.counters(7) == (0, 0)


@pytest.mark.parametrize("history", [
    [],
    [(1, 1), (1, 1), (3, 0), (5, 1), (5, 0), (6, 0), (6, 0)],
    [(0, 1), (2, 1), (4, 1), (0, 0), (7, 0)],
])
def test_lazy_sampler_matches_brute_force(history):
    post = ArmPosterior(3)
    for arm, xi in history:
        post.update(arm, xi)
    n = 30_000
    r1, r2 = np.random.default_rng(1), np.random.default_rng(2)
    lazy = np.bincount([post.sample(r1) for _ in range(n)], minlength=8)
    brute = np.bincount([_brute_force_thompson(post, r2) for _ in range(n)], minlength=8)
    keep = (lazy + brute) > 0
    assert stats.chi2_contingency(np.stack([lazy[keep], brute[keep]])).pvalue > 0.001


def test_dominant_arm_is_chosen(rng):
    post = ArmPosterior(4)
    for _ in range(1000):
        post.update(9, 1)
    picks = [post.sample(rng) for _ in range(2000)]
    assert np.mean(np.array(picks) == 9) >= 0.95


def test_fresh_state_is_uniform(rng):
    post = ArmPosterior(3)
    counts = np.bincount([post.sample(rng) for _ in range(16_000)], minlength=8)
    assert stats.chisquare(counts).pvalue > 0.001


def test_unplayed_arms_stay_uniform_once_most_are_played(rng):
    post = ArmPosterior(4)
    for arm in range(10):
        post.update(arm, 0)
    first = [post._fresh_arm(rng) for _ in range(6000)]
    assert set(first) == set(range(10, 16))
    assert stats.chisquare(np.bincount(first)[10:]).pvalue > 0.001
    post.update(13, 0)
    post.update(15, 1)
    later = {post._fresh_arm(rng) for _ in range(2000)}
    assert later == {10, 11, 12, 14}


def test_best_mean_arm():
    post = ArmPosterior(2)
    assert post.best_mean_arm() == 0
    post.update(0, 0)
    assert post.best_mean_arm() == 1  # untouched arms keep mean 1/2
    post.update(3, 1)
    assert post.best_mean_arm() == 3


def test_memory_guard():
    with pytest.raises(ConfigurationError, match=r"2\*2\^M"):
        MabState(InstanceDims(4, 1, 32))
    state = MabState(InstanceDims(2, 1, 16))
    assert state.learners[0].n_arms == 2**16


def test_only_active_learners_play(rng):
    dims = InstanceDims(4, 2, 3)
    state = MabState(dims)
    moves, arms = mab_step(state, ActiveSets.of([1], [2, 3]), rng)
    assert set(arms) == {(0, 1), (1, 2), (1, 3)}
    assert not moves[0, [0, 2, 3]].any() and not moves[1, [0, 1]].any()


def test_random_closed_form():
    # two active copies, one opportunity, p = 1/2 each: success iff exactly one transmits
    sc = explicit_scenario(InstanceDims(2, 1, 1), [ActiveSets.of([0, 1])])
    trace = run_random(sc, 100_000, seed=0)
    assert abs(trace.xi.mean() - 0.5) < 0.01


def test_random_single_copy_always_succeeds(rng):
    dims = InstanceDims(3, 1, 4)
    a = ActiveSets.of([2])
    moves = random_policy(a, dims, rng)
    assert moves[0, 2].all() and not moves[0, :2].any()


def test_mab_converges_on_small_control():
    # node 0 always holds the message, node 1 only sometimes
    dims = InstanceDims(2, 1, 2)
    support = [ActiveSets.of([0]), ActiveSets.of([0, 1])]
    sc = explicit_scenario(dims, support, [0.5, 0.5])
    _, best = best_deterministic(ExplicitDistribution(tuple(support), (0.5, 0.5)), dims)
    assert best == 1.0
    _, trace = run_mab(sc, 4000, seed=3)
    assert trace.xi[-1000:].mean() > 0.9


def test_mab_is_seeded():
    sc = make_balanced(8, 3, 1, 3, seed=0)
    a = run_mab(sc, 300, seed=4)[1].xi
    b = run_mab(sc, 300, seed=4)[1].xi
    assert a.tobytes() == b.tobytes()
