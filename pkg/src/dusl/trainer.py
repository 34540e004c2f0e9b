"""Centralised-reward training loop, deterministic inference and online adaptation.

Every epoch samples the active sets and one exploration input ``s``; each
active learner samples its move from its own network, the controller
computes the joint reward ``xi`` and broadcasts it, and each active learner
takes a reward-weighted log-likelihood ascent step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ActiveSets, InstanceDims, Reward, evaluate_success
from .exceptions import ConfigurationError, StructuralError
from .metrics import RewardTrace, moving_average  # noqa: F401  (re-exported)
from .policy import (
    LEARNING_RATE,
    MlpParams,
    PolicyBank,
    forward,
    reinforce_update,
    sample_move,
)
from .scenario import Environment, ScenarioSpec

MODES = ("offline", "online-full", "online-partial", "online-scratch", "frozen")


@dataclass
class TrainConfig:
    n_epochs: int = 20000
    exploration_decay: float = 1.0
    decay_timescale: float | None = None  # defaults to n_epochs / 10
    learning_rate: float = LEARNING_RATE
    mode: str = "offline"
    window: int = 100
    reset_optimizer: bool = False

    def __post_init__(self):
        if self.n_epochs < 0:
            raise ConfigurationError("n_epochs must be >= 0")
        if self.exploration_decay < 0:
            raise ConfigurationError("exploration_decay must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.window < 1:
            raise ConfigurationError("window must be >= 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown adaptation mode {self.mode!r}; expected one of {MODES}")
        if self.decay_timescale is not None and self.decay_timescale <= 0:
            raise ConfigurationError("decay_timescale must be > 0")

    @property
    def timescale(self) -> float:
        if self.decay_timescale is not None:
            return float(self.decay_timescale)
        return max(self.n_epochs / 10.0, 1.0)

    def explore_std(self, t: int) -> float:
        """Standard deviation of ``s`` at ``t`` epochs after the decay clock started."""
        return math.exp(-self.exploration_decay * t / self.timescale)


@dataclass
class EpisodeRecord:
    epoch: int
    s: float
    active: ActiveSets
    moves: np.ndarray
    reward: Reward
    explore_std: float
    change: bool


class Learner:
    """One decentralised (message, node) agent.

    It keeps the trace and move of its last action so that the update only
    needs the broadcast scalar reward.
    """

    __slots__ = ("params", "_trace", "_move")

    def __init__(self, params: MlpParams):
        self.params = params
        self._trace = None
        self._move = None

    def act(self, s: float, rng: np.random.Generator) -> np.ndarray:
        self._trace = forward(self.params, s)
        self._move = sample_move(self._trace, rng)
        return self._move

    def learn(self, xi: int, learning_rate: float) -> None:
        if xi and self._trace is not None:
            reinforce_update(self.params, self._trace, self._move, xi, learning_rate)
        self._trace = self._move = None


def make_learners(bank: PolicyBank) -> list[Learner]:
    return [Learner(p) for p in bank.learners()]


def _check_dims(bank: PolicyBank, scenario: ScenarioSpec) -> InstanceDims:
    if bank.dims != scenario.dims:
        raise StructuralError(f"policies sized for {bank.dims} but scenario is {scenario.dims}")
    return bank.dims


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def run_epochs(
    bank: PolicyBank,
    env: Environment,
    config: TrainConfig,
    rng: np.random.Generator,
    *,
    update: bool = True,
    restart_on_change: bool = False,
    learners: list[Learner] | None = None,
    callback: Callable[[EpisodeRecord], None] | None = None,
) -> RewardTrace:
    """Shared epoch loop behind :func:`train` and :func:`adapt_online`."""
    dims = bank.dims
    T = config.n_epochs
    env.dynamics.validate(max(T, 1))
    learners = learners if learners is not None else make_learners(bank)
    N = dims.n_nodes
    xi = np.zeros(T, dtype=np.int8)
    stds = np.zeros(T)
    changes = np.zeros(T, dtype=bool)
    clock = 0
    for t in range(T):
        change = env.is_change_epoch(t)
        active = env.step(t)
        if change and restart_on_change:
            clock = t
        std = config.explore_std(t - clock)
        s = float(rng.normal(0.0, std))
        moves = np.zeros(dims.move_shape, dtype=np.uint8)
        acting = []
        for l, members in enumerate(active.sets):
            for n in members:
                learner = learners[l * N + n]
                moves[l, n] = learner.act(s, rng)
                acting.append(learner)
        reward = evaluate_success(active, moves, dims)
        if update:
            for learner in acting:
                learner.learn(reward.xi, config.learning_rate)
        xi[t] = reward.xi
        stds[t] = std
        changes[t] = change
        if callback is not None:
            callback(EpisodeRecord(t, s, active, moves, reward, std, change))
    return RewardTrace(xi, stds, changes)


def train(
    config: TrainConfig,
    scenario: ScenarioSpec,
    bank: PolicyBank,
    seed=None,
    env: Environment | None = None,
    callback=None,
) -> tuple[PolicyBank, RewardTrace]:
    """Offline training; ``bank`` is updated in place and returned."""
    _check_dims(bank, scenario)
    env = env if env is not None else scenario.environment()
    trace = run_epochs(bank, env, config, _as_rng(seed), callback=callback)
    return bank, trace


def evaluate_deterministic(
    bank: PolicyBank,
    scenario: ScenarioSpec,
    n_steps: int,
    seed=None,
    env: Environment | None = None,
) -> float | None:
    """Success rate of the rounded policies; ``None`` when ``n_steps == 0``.

    Moves are precomputed once at ``s = 0``; the loop only looks them up.
    Without an explicit ``env`` the scenario's pattern is reused with a
    sampling stream selected by ``seed``.
    """
    _check_dims(bank, scenario)
    if n_steps == 0:
        return None
    if env is None:
        env = scenario.environment(stream=0 if seed is None else 1 + int(seed))
    table = bank.deterministic_table()
    return success_rate_of_table(table, scenario, n_steps, env)


def success_rate_of_table(
    table: np.ndarray, scenario: ScenarioSpec, n_steps: int, env: Environment | None = None
) -> float | None:
    if n_steps == 0:
        return None
    env = env if env is not None else scenario.environment()
    dims = scenario.dims
    hits = 0
    for t in range(n_steps):
        active = env.step(t)
        mask = active.mask(dims.n_nodes)
        hits += evaluate_success(active, table * mask[:, :, None], dims).xi
    return hits / n_steps


def adapt_online(
    config: TrainConfig,
    scenario: ScenarioSpec,
    bank: PolicyBank,
    seed=None,
    env: Environment | None = None,
    callback=None,
) -> tuple[PolicyBank, RewardTrace]:
    """Keep learning while the scenario's change schedule shifts the activation law.

    ``online-full`` updates every layer, ``online-partial`` freezes the first
    hidden layer, ``online-scratch`` reinitialises all parameters first, and
    ``frozen`` runs the same sampling loop without any update. The
    exploration clock restarts at every change epoch.
    """
    _check_dims(bank, scenario)
    rng = _as_rng(seed)
    env = env if env is not None else scenario.environment()
    mode = config.mode
    if mode == "frozen":
        trace = run_epochs(bank, env, config, rng, update=False, restart_on_change=True, callback=callback)
        return bank, trace
    if mode == "online-scratch":
        bank.reinitialize(rng.integers(2**63))
    if mode == "online-partial":
        bank.freeze_layers([0])
    else:
        bank.freeze_layers([])
    if config.reset_optimizer:
        bank.reset_optimizer()
    trace = run_epochs(bank, env, config, rng, restart_on_change=True, callback=callback)
    return bank, trace
