"""Estimator wrappers in the scikit-learn style.

``fit`` takes a :class:`~dusl.scenario.ScenarioSpec` (the training data is
generated by the scenario's activation process), ``predict`` maps active-set
realisations to move tensors and ``score`` returns a success rate.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import MabState, arm_to_move, random_policy, run_mab, run_random
from .core import evaluate_success
from .exceptions import ConfigurationError
from .policy import HIDDEN_SIZES, LEARNING_RATE, PolicyBank, load_snapshot, save_snapshot
from .trainer import MODES, TrainConfig, adapt_online, evaluate_deterministic, success_rate_of_table, train
from .validation import _is_single, check_active_sets, check_positive_int, check_scenario, check_seed_sequence


def _stack(moves: list[np.ndarray], single: bool) -> np.ndarray:
    return moves[0] if single else np.stack(moves)


class DUSL(BaseEstimator):
    """Per-(message, node) policy networks trained from the shared success reward.

    Parameters
    ----------
    n_epochs : int
        Training epochs used by :meth:`fit` (and by :meth:`partial_fit`
        unless overridden).
    exploration_decay : float
        Decay factor of the exploration input's standard deviation.
    decay_timescale : float or None
        Epoch scale of that decay; ``None`` means ``n_epochs / 10``.
    """

    def __init__(
        self,
        n_epochs: int = 20000,
        exploration_decay: float = 1.0,
        decay_timescale: float | None = None,
        learning_rate: float = LEARNING_RATE,
        hidden_sizes: tuple[int, ...] = HIDDEN_SIZES,
        window: int = 100,
        dtype: str = "float32",
        random_state: int | None = None,
    ):
        self.n_epochs = n_epochs
        self.exploration_decay = exploration_decay
        self.decay_timescale = decay_timescale
        self.learning_rate = learning_rate
        self.hidden_sizes = hidden_sizes
        self.window = window
        self.dtype = dtype
        self.random_state = random_state

    def _config(self, n_epochs=None, mode="offline", reset_optimizer=False) -> TrainConfig:
        return TrainConfig(
            n_epochs=check_positive_int(self.n_epochs if n_epochs is None else n_epochs, "n_epochs", True),
            exploration_decay=self.exploration_decay,
            decay_timescale=self.decay_timescale,
            learning_rate=self.learning_rate,
            mode=mode,
            window=self.window,
            reset_optimizer=reset_optimizer,
        )

    def _init(self, scenario):
        init_ss, train_ss = check_seed_sequence(self.random_state).spawn(2)
        self.bank_ = PolicyBank(scenario.dims, init_ss, tuple(self.hidden_sizes), np.dtype(self.dtype))
        self._rng = np.random.default_rng(train_ss)
        self.dims_ = scenario.dims
        self.n_epochs_seen_ = 0
        self._table = None

    def fit(self, X, y=None):
        """Train offline on the activation process described by ``X``."""
        scenario = check_scenario(X)
        config = self._config()
        self._init(scenario)
        _, trace = train(config, scenario, self.bank_, self._rng)
        self.reward_trace_ = trace
        self.n_epochs_seen_ = len(trace)
        return self

    def partial_fit(self, X, y=None, mode: str = "online-full", n_epochs: int | None = None,
                    reset_optimizer: bool = False):
        """Continue learning on ``X`` (usually a scenario with a change schedule)."""
        scenario = check_scenario(X)
        if mode not in MODES or mode == "offline":
            raise ConfigurationError(f"partial_fit mode must be one of {MODES[1:]}, got {mode!r}")
        if not hasattr(self, "bank_"):
            self._init(scenario)
        elif scenario.dims != self.dims_:
            raise ConfigurationError(f"estimator fitted for {self.dims_}, scenario is {scenario.dims}")
        config = self._config(n_epochs, mode, reset_optimizer)
        _, trace = adapt_online(config, scenario, self.bank_, self._rng)
        self.reward_trace_ = trace
        self.n_epochs_seen_ += len(trace)
        self._table = None
        return self

    def predict(self, X) -> np.ndarray:
        """Rounded moves for one active-set realisation, or a stack for several."""
        check_is_fitted(self, "bank_")
        single = not isinstance(X, list) or _is_single(X)
        items = check_active_sets(X, self.dims_)
        table = self.deterministic_table()
        return _stack([table * a.mask(self.dims_.n_nodes)[:, :, None] for a in items], single)

    def predict_proba(self, s: float = 0.0) -> np.ndarray:
        """Transmission probabilities of every learner at input ``s``, shape (L, N, M)."""
        check_is_fitted(self, "bank_")
        return self.bank_.probabilities(s)

    def deterministic_table(self) -> np.ndarray:
        """Precomputed rounded moves of every learner, refreshed after each (partial) fit."""
        check_is_fitted(self, "bank_")
        if getattr(self, "_table", None) is None:
            self._table = self.bank_.deterministic_table()
        return self._table

    def score(self, X, y=None, n_steps: int = 1000, seed: int | None = 0) -> float | None:
        """Success rate of the rounded policies on ``n_steps`` fresh draws of ``X``."""
        check_is_fitted(self, "bank_")
        return evaluate_deterministic(self.bank_, check_scenario(X), n_steps, seed)

    def save(self, path, **meta):
        check_is_fitted(self, "bank_")
        return save_snapshot(path, self.bank_, epoch=self.n_epochs_seen_, **meta)

    @classmethod
    def load(cls, path, **params) -> "DUSL":
        bank, header = load_snapshot(path)
        est = cls(hidden_sizes=bank.hidden, dtype=bank.dtype.name, **params)
        est.bank_ = bank
        est.dims_ = bank.dims
        est.n_epochs_seen_ = int(header.get("epoch", 0))
        est._rng = np.random.default_rng(check_seed_sequence(est.random_state).spawn(2)[1])
        return est


class ThompsonMAB(BaseEstimator):
    """Independent Thompson-sampling bandits over the ``2**M`` moves of each learner."""

    def __init__(self, n_epochs: int = 20000, random_state: int | None = None):
        self.n_epochs = n_epochs
        self.random_state = random_state

    def fit(self, X, y=None):
        scenario = check_scenario(X)
        n = check_positive_int(self.n_epochs, "n_epochs", True)
        self.state_ = MabState(scenario.dims)
        self.dims_ = scenario.dims
        self._rng = np.random.default_rng(check_seed_sequence(self.random_state))
        self.state_, self.reward_trace_ = run_mab(scenario, n, self._rng, state=self.state_)
        return self

    def partial_fit(self, X, y=None, n_epochs: int | None = None):
        scenario = check_scenario(X)
        if not hasattr(self, "state_"):
            self.state_ = MabState(scenario.dims)
            self.dims_ = scenario.dims
            self._rng = np.random.default_rng(check_seed_sequence(self.random_state))
        n = self.n_epochs if n_epochs is None else n_epochs
        self.state_, self.reward_trace_ = run_mab(scenario, n, self._rng, state=self.state_)
        return self

    def predict(self, X) -> np.ndarray:
        """Posterior-mean greedy moves (no sampling)."""
        check_is_fitted(self, "state_")
        single = not isinstance(X, list) or _is_single(X)
        items = check_active_sets(X, self.dims_)
        out = []
        M = self.dims_.n_opportunities
        for a in items:
            moves = np.zeros(self.dims_.move_shape, dtype=np.uint8)
            for l, n in a.pairs():
                moves[l, n] = arm_to_move(self.state_.posterior(l, n).best_mean_arm(), M)
            out.append(moves)
        return _stack(out, single)

    def score(self, X, y=None, n_steps: int = 1000, seed: int | None = 0) -> float | None:
        check_is_fitted(self, "state_")
        scenario = check_scenario(X)
        if n_steps == 0:
            return None
        env = scenario.environment(stream=0 if seed is None else 1 + int(seed))
        hits = 0
        for t in range(n_steps):
            active = env.step(t)
            hits += evaluate_success(active, self.predict(active), self.dims_).xi
        return hits / n_steps


class RandomPolicy(BaseEstimator):
    """Every active learner transmits on each opportunity with probability ``1/|A|``."""

    def __init__(self, n_epochs: int = 20000, random_state: int | None = None):
        self.n_epochs = n_epochs
        self.random_state = random_state

    def fit(self, X, y=None):
        scenario = check_scenario(X)
        n = check_positive_int(self.n_epochs, "n_epochs", True)
        self.dims_ = scenario.dims
        self._rng = np.random.default_rng(check_seed_sequence(self.random_state))
        self.reward_trace_ = run_random(scenario, n, self._rng)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "dims_")
        single = not isinstance(X, list) or _is_single(X)
        items = check_active_sets(X, self.dims_)
        return _stack([random_policy(a, self.dims_, self._rng) for a in items], single)

    def score(self, X, y=None, n_steps: int = 1000, seed: int | None = 0) -> float | None:
        check_is_fitted(self, "dims_")
        scenario = check_scenario(X)
        if n_steps == 0:
            return None
        trace = run_random(scenario, n_steps, seed, env=scenario.environment(stream=1 + int(seed or 0)))
        return float(trace.xi.mean())


__all__ = ["DUSL", "ThompsonMAB", "RandomPolicy", "success_rate_of_table"]
