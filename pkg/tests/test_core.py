from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dusl.core import (
    ActiveSets,
    InstanceDims,
    Reward,
    check_moves,
    concatenated_cardinality,
    evaluate_success,
    label,
    masked,
    moves_from_assignment,
)
from dusl.exceptions import StructuralError


class TestInstanceDims:
    def test_learner_count_and_shape(self):
        d = InstanceDims(n_nodes=4, n_messages=2, n_opportunities=3)
        assert d.n_learners == 8
        assert d.move_shape == (2, 4, 3)

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, 0, 1), (1, 1, 0), (3, 2, 1), (2, 1.5, 2)])
    def test_rejects_invalid(self, args):
        with pytest.raises(StructuralError):
            InstanceDims(*args)


class TestActiveSets:
    def test_normalises_and_allows_multi_message_nodes(self):
        a = ActiveSets.of([3, 1], [1])
        assert a.sets == ((1, 3), (1,))
        assert a.pairs() == [(0, 1), (0, 3), (1, 1)]
        assert a.labels() == [["n2", "n4"], ["n2"]]

    @pytest.mark.parametrize("sets", [([],), ([1, 1],), ([-1],)])
    def test_rejects_bad_sets(self, sets):
        with pytest.raises(StructuralError):
            ActiveSets.of(*sets)

    def test_validate_range_and_count(self):
        d = InstanceDims(3, 2, 2)
        ActiveSets.of([0, 2], [1]).validate(d)
        with pytest.raises(StructuralError):
            ActiveSets.of([3], [1]).validate(d)
        with pytest.raises(StructuralError):
            ActiveSets.of([0]).validate(d)

    def test_mask(self):
        m = ActiveSets.of([0, 2], [1]).mask(3)
        np.testing.assert_array_equal(m, [[1, 0, 1], [0, 1, 0]])


def test_labels_are_one_based():
    assert label("m", 0) == "m1"
    assert label("n", 9) == "n10"


class TestConcatenatedCardinality:
    def test_node_counted_once_per_message(self):
        assert concatenated_cardinality(ActiveSets.of([0, 1], [1])) == 3

    def test_single(self):
        assert concatenated_cardinality(ActiveSets.of([5])) == 1

    @given(st.integers(1, 5), st.integers(1, 6))
    def test_sum_of_sizes(self, L, c):
        a = ActiveSets(tuple(tuple(range(c)) for _ in range(L)))
        assert concatenated_cardinality(a) == L * c


class TestReward:
    def test_product_rule(self):
        Reward(1, (1, 1))
        Reward(0, (1, 0))
        with pytest.raises(StructuralError):
            Reward(1, (1, 0))


class TestEvaluateSuccess:
    def test_fig1_example(self, fig1):
        dims, _, x = fig1
        a = ActiveSets.of([0, 1], [3])
        r = evaluate_success(a, masked(x, a), dims)
        assert r.xi == 1 and r.per_message_acks == (1, 1)

    def test_fig1_all_four_sets(self, fig1):
        dims, dist, x = fig1
        for a in dist.support:
            assert evaluate_success(a, masked(x, a), dims).xi == 1

    def test_single_uncontended(self):
        d = InstanceDims(1, 1, 1)
        assert evaluate_success(ActiveSets.of([0]), np.ones((1, 1, 1)), d).xi == 1

    def test_forced_collision(self):
        d = InstanceDims(2, 1, 1)
        assert evaluate_success(ActiveSets.of([0, 1]), np.ones((1, 2, 1)), d).xi == 0

    def test_all_silent_fails(self):
        d = InstanceDims(4, 2, 3)
        assert evaluate_success(ActiveSets.of([0, 1], [2]), np.zeros(d.move_shape), d).xi == 0

    def test_cross_message_collision(self):
        d = InstanceDims(2, 2, 2)
        x = moves_from_assignment(d, {(0, 0): [0], (1, 1): [0, 1]})
        r = evaluate_success(ActiveSets.of([0], [1]), x, d)
        assert r.per_message_acks == (0, 1)

    def test_self_collision_fails_both(self):
        # one node sends both messages on the only opportunities
        d = InstanceDims(1, 2, 2)
        x = moves_from_assignment(d, {(0, 0): [0], (1, 0): [0]})
        r = evaluate_success(ActiveSets.of([0], [0]), x, d)
        assert r.per_message_acks == (0, 0)

    def test_inactive_transmission_is_an_error(self):
        d = InstanceDims(2, 1, 1)
        with pytest.raises(StructuralError, match="inactive"):
            evaluate_success(ActiveSets.of([0]), np.ones((1, 2, 1)), d)

    def test_shape_mismatch(self):
        d = InstanceDims(2, 1, 2)
        with pytest.raises(StructuralError):
            evaluate_success(ActiveSets.of([0]), np.zeros((1, 2, 3)), d)
        with pytest.raises(StructuralError):
            check_moves(np.full(d.move_shape, 2), d)

    @given(st.data())
    def test_pure(self, data):
        d = InstanceDims(3, 2, 3)
        a = ActiveSets.of([0, 1], [2])
        bits = data.draw(st.lists(st.integers(0, 1), min_size=18, max_size=18))
        x = masked(np.array(bits, np.uint8).reshape(d.move_shape), a)
        before = x.copy()
        assert evaluate_success(a, x, d) == evaluate_success(a, x, d)
        np.testing.assert_array_equal(x, before)


def _brute_single_message(x, active):
    # direct per-opportunity count for L = 1
    return int(any(sum(x[n, m] for n in active) == 1 for m in range(x.shape[1])))


@given(
    st.integers(1, 10).flatmap(
        lambda M: st.tuples(
            st.just(M),
            st.lists(st.integers(0, 5), min_size=1, max_size=6, unique=True),
            st.lists(st.lists(st.integers(0, 1), min_size=M, max_size=M), min_size=6, max_size=6),
        )
    )
)
def test_single_message_matches_enumeration(case):
    M, active, rows = case
    d = InstanceDims(6, 1, M)
    x = np.zeros(d.move_shape, np.uint8)
    for n in active:
        x[0, n] = rows[n]
    a = ActiveSets.of(active)
    assert evaluate_success(a, x, d).xi == _brute_single_message(x[0], active)


@given(st.integers(0, 2**31 - 1))
def test_adding_a_bit_needs_fresh_evaluation(seed):
    """Adding one transmission can flip the reward either way; recompute from scratch."""
    rng = np.random.default_rng(seed)
    d = InstanceDims(4, 2, 3)
    a = ActiveSets.of([0, 1, 2], [1, 3])
    x = masked(rng.integers(0, 2, d.move_shape).astype(np.uint8), a)
    for l, n in a.pairs():
        for m in range(3):
            y = x.copy()
            y[l, n, m] = 1
            fresh = evaluate_success(a, y, d)
            counts = y.sum(axis=1)
            expected = [
                int(any(counts[k, mm] == 1 and counts[:, mm].sum() == 1 for mm in range(3)))
                for k in range(2)
            ]
            assert fresh.per_message_acks == tuple(expected)


def test_both_flip_directions_occur():
    d = InstanceDims(2, 1, 1)
    a = ActiveSets.of([0, 1])
    none = np.zeros(d.move_shape, np.uint8)
    one = moves_from_assignment(d, {(0, 0): [0]})
    two = moves_from_assignment(d, {(0, 0): [0], (0, 1): [0]})
    xs = [evaluate_success(a, x, d).xi for x in (none, one, two)]
    assert xs == [0, 1, 0]


def test_exhaustive_tiny_against_definition():
    d = InstanceDims(2, 2, 2)
    a = ActiveSets.of([0, 1], [1])
    for bits in itertools.product([0, 1], repeat=8):
        x = masked(np.array(bits, np.uint8).reshape(d.move_shape), a)
        acks = []
        for l in range(2):
            ok = False
            for m in range(2):
                own = sum(x[l, n, m] for n in a.sets[l])
                other = sum(x[k, n, m] for k in range(2) if k != l for n in a.sets[k])
                ok |= own == 1 and other == 0
            acks.append(int(ok))
        assert evaluate_success(a, x, d).per_message_acks == tuple(acks)
