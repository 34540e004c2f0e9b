from __future__ import annotations

import numpy as np
import pytest

from dusl.core import ActiveSets, InstanceDims, evaluate_success
from dusl.exceptions import ConfigurationError, StructuralError
from dusl.policy import PolicyBank
from dusl.scenario import DynamicsSpec, explicit_scenario, make_balanced
from dusl.trainer import (
    TrainConfig,
    adapt_online,
    evaluate_deterministic,
    success_rate_of_table,
    train,
)


def _bank_playing(table: np.ndarray, dims: InstanceDims) -> PolicyBank:
    """A bank whose rounded moves are exactly ``table`` (output biases only)."""
    bank = PolicyBank(dims, seed=0, dtype=np.float64)
    M = dims.n_opportunities
    for k, p in enumerate(bank.learners()):
        p.weights[-2][:] = 0.0
        p.weights[-1][:] = np.where(table.reshape(-1, M)[k] == 1, 5.0, -5.0)
    return bank


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert c.n_epochs == 20000 and c.timescale == 2000.0 and c.learning_rate == 1e-3

    @pytest.mark.parametrize("kw", [
        {"n_epochs": -1}, {"exploration_decay": -0.1}, {"learning_rate": 0.0},
        {"window": 0}, {"mode": "sideways"}, {"decay_timescale": 0.0},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)

    def test_schedule(self):
        c = TrainConfig(n_epochs=1000, exploration_decay=1.0)
        stds = [c.explore_std(t) for t in range(1000)]
        assert stds[0] == 1.0 and all(a >= b for a, b in zip(stds, stds[1:]))
        assert np.isclose(c.explore_std(100), np.exp(-1))
        flat = TrainConfig(n_epochs=1000, exploration_decay=0.0)
        assert {flat.explore_std(t) for t in range(0, 1000, 37)} == {1.0}


def test_zero_epochs_leave_bank_untouched():
    sc = make_balanced(8, 4, 1, 2, seed=0)
    bank = PolicyBank(sc.dims, seed=1)
    before = bank.theta.copy()
    _, trace = train(TrainConfig(n_epochs=0), sc, bank, seed=0)
    assert len(trace) == 0 and (bank.theta == before).all()


def test_dims_mismatch():
    sc = make_balanced(8, 4, 1, 2)
    with pytest.raises(StructuralError):
        train(TrainConfig(n_epochs=1), sc, PolicyBank(InstanceDims(8, 1, 5), seed=0))


def test_seeded_runs_are_identical():
    sc = make_balanced(12, 4, 2, 3, seed=3)
    runs = []
    for _ in range(2):
        bank = PolicyBank(sc.dims, seed=4)
        _, trace = train(TrainConfig(n_epochs=150), sc, bank, seed=5)
        runs.append((trace.xi.tobytes(), bank.theta.tobytes()))
    assert runs[0] == runs[1]


def test_reward_is_the_success_predicate():
    sc = make_balanced(10, 3, 2, 3, seed=1)
    seen = []

    def check(rec):
        assert rec.reward == evaluate_success(rec.active, rec.moves, sc.dims)
        # only active learners transmit
        mask = rec.active.mask(sc.dims.n_nodes)
        assert not (rec.moves * (1 - mask)[:, :, None]).any()
        seen.append(rec.reward.xi)

    _, trace = train(TrainConfig(n_epochs=200), sc, PolicyBank(sc.dims, seed=0), seed=0, callback=check)
    assert seen == trace.xi.tolist()


def test_inactive_learners_never_change():
    # node 2 never holds the message: its parameters and optimiser state stay at init
    dims = InstanceDims(3, 1, 2)
    sc = explicit_scenario(dims, [ActiveSets.of([0]), ActiveSets.of([0, 1])])
    bank = PolicyBank(dims, seed=0)
    init = bank.copy()
    train(TrainConfig(n_epochs=300), sc, bank, seed=1)
    assert (bank.theta[2] == init.theta[2]).all() and bank.steps[2] == 0
    assert bank.steps[0] > 0


def test_fig1_policies_by_hand(fig1):
    dims, dist, strategy = fig1
    sc = explicit_scenario(dims, list(dist.support))
    bank = _bank_playing(strategy, dims)
    assert (bank.deterministic_table() == strategy).all()
    assert evaluate_deterministic(bank, sc, 400, seed=0) == 1.0
    assert success_rate_of_table(strategy, sc, 400) == 1.0
    assert evaluate_deterministic(bank, sc, 0) is None


def test_learning_improves_small_instance():
    sc = make_balanced(16, 4, 1, 4, seed=2)
    bank = PolicyBank(sc.dims, seed=2)
    _, trace = train(TrainConfig(n_epochs=3000), sc, bank, seed=2)
    assert trace.xi[-500:].mean() > trace.xi[:200].mean() + 0.1


class TestOnline:
    def test_without_changes_matches_offline(self):
        sc = make_balanced(10, 4, 1, 3, seed=6)
        a, b = PolicyBank(sc.dims, seed=1), PolicyBank(sc.dims, seed=1)
        _, ta = train(TrainConfig(n_epochs=200), sc, a, seed=9)
        _, tb = adapt_online(TrainConfig(n_epochs=200, mode="online-full"), sc, b, seed=9)
        assert ta.xi.tobytes() == tb.xi.tobytes() and a.theta.tobytes() == b.theta.tobytes()

    def _dynamic(self):
        return make_balanced(10, 4, 1, 3, seed=6, dynamics=DynamicsSpec((100, 200)))

    def test_exploration_restarts(self):
        _, tr = adapt_online(TrainConfig(n_epochs=300, mode="online-full"), self._dynamic(),
                             PolicyBank(self._dynamic().dims, seed=0), seed=0)
        assert tr.explore_std[0] == tr.explore_std[100] == tr.explore_std[200] == 1.0
        assert tr.explore_std[99] < 1.0
        assert tr.change_marker.nonzero()[0].tolist() == [100, 200]

    def test_partial_keeps_first_layer(self):
        sc = self._dynamic()
        bank = PolicyBank(sc.dims, seed=0)
        first = bank.layout.layer_slices[0]
        before = bank.theta.copy()
        adapt_online(TrainConfig(n_epochs=300, mode="online-partial"), sc, bank, seed=0)
        assert (bank.theta[:, first] == before[:, first]).all()
        assert (bank.theta != before).any()

    def test_scratch_reinitialises(self):
        sc = self._dynamic()
        bank = PolicyBank(sc.dims, seed=0)
        before = bank.theta.copy()
        adapt_online(TrainConfig(n_epochs=0, mode="online-scratch"), make_balanced(10, 4, 1, 3, seed=6),
                     bank, seed=0)
        assert (bank.theta != before).any(axis=1).all()

    def test_frozen_samples_without_updates(self):
        sc = self._dynamic()
        bank = PolicyBank(sc.dims, seed=0)
        before = bank.copy()
        _, tr = adapt_online(TrainConfig(n_epochs=300, mode="frozen"), sc, bank, seed=0)
        assert bank.theta.tobytes() == before.theta.tobytes() and not bank.steps.any()
        # same draws as the learning loop up to the first rewarded epoch
        _, ref = adapt_online(TrainConfig(n_epochs=300, mode="online-full"), sc, before, seed=0)
        first = int(np.argmax(ref.xi))
        assert (tr.xi[: first + 1] == ref.xi[: first + 1]).all()
        assert tr.explore_std[100] == 1.0

    def test_reset_optimizer(self):
        sc = make_balanced(10, 4, 1, 3, seed=6)
        bank = PolicyBank(sc.dims, seed=0)
        train(TrainConfig(n_epochs=100), sc, bank, seed=0)
        assert bank.steps.any()
        adapt_online(TrainConfig(n_epochs=0, mode="online-full", reset_optimizer=True), sc, bank)
        assert not bank.steps.any() and not bank.m.any()
