from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dusl import DUSL, RandomPolicy, ThompsonMAB
from dusl.core import ActiveSets
from dusl.exceptions import ConfigurationError
from dusl.scenario import DynamicsSpec, make_balanced

SMALL = make_balanced(8, 3, 1, 3, seed=1)


def test_params_and_clone():
    est = DUSL(n_epochs=50, exploration_decay=0.5, random_state=3)
    params = est.get_params()
    assert params["n_epochs"] == 50 and params["exploration_decay"] == 0.5
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "bank_")
    est.set_params(learning_rate=2e-3)
    assert est.learning_rate == 2e-3


def test_unfitted():
    with pytest.raises(NotFittedError):
        DUSL().predict(ActiveSets.of([0]))


def test_dusl_fit_predict():
    est = DUSL(n_epochs=200, hidden_sizes=(16, 8), random_state=0).fit(SMALL)
    a = ActiveSets.of([2, 5])
    x = est.predict(a)
    assert x.shape == (1, 8, 3)
    assert not np.delete(x[0], [2, 5], axis=0).any()
    np.testing.assert_array_equal(x[0, [2, 5]], est.deterministic_table()[0, [2, 5]])
    assert est.predict([a, ActiveSets.of([0])]).shape == (2, 1, 8, 3)
    assert est.predict_proba().shape == (1, 8, 3)
    assert 0.0 <= est.score(SMALL, n_steps=100) <= 1.0
    assert est.score(SMALL, n_steps=0) is None


def test_dusl_is_seeded():
    a = DUSL(n_epochs=100, hidden_sizes=(16, 8), random_state=4).fit(SMALL)
    b = DUSL(n_epochs=100, hidden_sizes=(16, 8), random_state=4).fit(SMALL)
    assert a.bank_.theta.tobytes() == b.bank_.theta.tobytes()
    assert a.reward_trace_.xi.tobytes() == b.reward_trace_.xi.tobytes()


def test_partial_fit_modes():
    est = DUSL(n_epochs=100, hidden_sizes=(16, 8), random_state=0).fit(SMALL)
    dyn = SMALL.with_dynamics(DynamicsSpec((40,)))
    est.partial_fit(dyn, mode="online-partial", n_epochs=80)
    assert est.n_epochs_seen_ == 180
    with pytest.raises(ConfigurationError):
        est.partial_fit(dyn, mode="offline")
    with pytest.raises(ConfigurationError):
        est.partial_fit(make_balanced(9, 3, 1, 3))


def test_save_load(tmp_path):
    est = DUSL(n_epochs=100, hidden_sizes=(16, 8), random_state=0).fit(SMALL)
    est.save(tmp_path / "p.npz")
    back = DUSL.load(tmp_path / "p.npz")
    assert back.hidden_sizes == (16, 8) and back.n_epochs_seen_ == 100
    assert (back.deterministic_table() == est.deterministic_table()).all()
    assert back.score(SMALL, n_steps=200) == est.score(SMALL, n_steps=200)


def test_mab_and_random():
    mab = ThompsonMAB(n_epochs=200, random_state=0).fit(SMALL)
    assert mab.predict(ActiveSets.of([1, 4])).shape == (1, 8, 3)
    assert 0.0 <= mab.score(SMALL, n_steps=50) <= 1.0
    mab.partial_fit(SMALL, n_epochs=10)
    assert len(mab.reward_trace_) == 10
    rnd = RandomPolicy(n_epochs=100, random_state=0).fit(SMALL)
    assert rnd.predict(ActiveSets.of([3])).sum() == 3
    assert 0.0 <= rnd.score(SMALL, n_steps=100) <= 1.0
    with pytest.raises(ConfigurationError):
        ThompsonMAB(n_epochs=1).fit(make_balanced(4, 32, 1, 2))
