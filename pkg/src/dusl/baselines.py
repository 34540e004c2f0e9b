"""Comparison policies: distributed Thompson sampling and uncoordinated random access."""
from __future__ import annotations

import numpy as np
from scipy.special import betainccinv

from .core import ActiveSets, InstanceDims, Reward, concatenated_cardinality, evaluate_success
from .exceptions import ConfigurationError
from .metrics import RewardTrace

MAX_MAB_OPPORTUNITIES = 16


def arm_to_move(arm: int, n_opportunities: int) -> np.ndarray:
    """Bit ``m`` of the arm index (LSB first) is the decision for opportunity ``m``."""
    return ((int(arm) >> np.arange(n_opportunities)) & 1).astype(np.uint8)


def move_to_arm(move) -> int:
    bits = np.asarray(move, dtype=np.int64)
    return int((bits << np.arange(len(bits))).sum())


class ArmPosterior:
    """Beta(1 + s, 1 + f) posteriors over all ``2**M`` arms of one learner.

    Only arms that have been played carry explicit counters; every other arm
    is still at the prior. Arms with equal counters are grouped, and a
    Thompson draw samples each group's maximum directly (the max of ``c``
    i.i.d. draws has CDF ``F**c``), then a uniform member of the winning
    group. This has exactly the law of drawing every arm and taking the argmax.
    """

    def __init__(self, n_opportunities: int):
        self.n_arms = 1 << n_opportunities
        self.counts: dict[int, tuple[int, int]] = {}
        self._groups: dict[tuple[int, int], list[int]] = {}
        self._pos: dict[int, int] = {}
        self._free: np.ndarray | None = None  # unplayed arms, built once most arms are played
        self._free_pos: np.ndarray | None = None
        self._n_free = 0

    def counters(self, arm: int) -> tuple[int, int]:
        return self.counts.get(int(arm), (0, 0))

    def _remove(self, key, arm):
        members = self._groups[key]
        i = self._pos.pop(arm)
        last = members.pop()
        if last != arm:
            members[i] = last
            self._pos[last] = i
        if not members:
            del self._groups[key]

    def update(self, arm: int, xi: int) -> None:
        arm = int(arm)
        old = self.counts.get(arm)
        s, f = old if old is not None else (0, 0)
        if old is not None:
            self._remove(old, arm)
        elif self._free is not None:
            self._take_free(arm)
        new = (s + 1, f) if xi else (s, f + 1)
        self.counts[arm] = new
        members = self._groups.setdefault(new, [])
        self._pos[arm] = len(members)
        members.append(arm)

    def sample(self, rng: np.random.Generator) -> int:
        keys = list(self._groups)
        sizes = [len(self._groups[k]) for k in keys]
        n_fresh = self.n_arms - len(self.counts)
        if n_fresh:
            keys.append((0, 0))
            sizes.append(n_fresh)
        a = np.array([1 + k[0] for k in keys], dtype=float)
        b = np.array([1 + k[1] for k in keys], dtype=float)
        c = np.array(sizes, dtype=float)
        # group max = F^-1(U^(1/c)); work with the upper tail 1 - U^(1/c) for accuracy near 1
        tail = -np.expm1(np.log(rng.random(len(keys))) / c)
        best = int(np.argmax(betainccinv(a, b, tail)))
        if n_fresh and best == len(keys) - 1:
            return self._fresh_arm(rng)
        members = self._groups[keys[best]]
        return members[int(rng.integers(len(members)))]

    def best_mean_arm(self) -> int:
        """Arm with the highest posterior mean; ties go to the lowest index."""
        best_arm, best_mean = None, -1.0
        for arm, (s, f) in self.counts.items():
            mean = (1 + s) / (2 + s + f)
            if mean > best_mean or (mean == best_mean and arm < best_arm):
                best_arm, best_mean = arm, mean
        if len(self.counts) < self.n_arms and best_mean <= 0.5:
            fresh = next(a for a in range(self.n_arms) if a not in self.counts)
            if best_mean < 0.5 or fresh < best_arm:
                return fresh
        return best_arm

    def _fresh_arm(self, rng) -> int:
        if len(self.counts) * 2 <= self.n_arms:
            while True:
                arm = int(rng.integers(self.n_arms))
                if arm not in self.counts:
                    return arm
        if self._free is None:
            self._free = np.setdiff1d(np.arange(self.n_arms), np.fromiter(self.counts, int))
            self._free_pos = np.full(self.n_arms, -1, dtype=np.int64)
            self._free_pos[self._free] = np.arange(len(self._free))
            self._n_free = len(self._free)
        return int(self._free[rng.integers(self._n_free)])

    def _take_free(self, arm: int) -> None:
        i = self._free_pos[arm]
        last = self._free[self._n_free - 1]
        self._free[i] = last
        self._free_pos[last] = i
        self._free_pos[arm] = -1
        self._n_free -= 1


class MabState:
    """One :class:`ArmPosterior` per (message, node) learner."""

    def __init__(self, dims: InstanceDims):
        M = dims.n_opportunities
        if M > MAX_MAB_OPPORTUNITIES:
            raise ConfigurationError(
                f"Thompson-sampling baseline needs 2*2^M = {2 * 2**M} Beta counters per learner "
                f"at M={M}; refusing above M={MAX_MAB_OPPORTUNITIES} "
                f"({2 * 2**MAX_MAB_OPPORTUNITIES} counters)"
            )
        self.dims = dims
        self.learners = [ArmPosterior(M) for _ in range(dims.n_learners)]

    def posterior(self, l: int, n: int) -> ArmPosterior:
        return self.learners[l * self.dims.n_nodes + n]


def mab_step(state: MabState, active: ActiveSets, rng: np.random.Generator):
    """Every active learner plays its Thompson arm; returns ``(moves, arms)``."""
    dims = state.dims
    active.validate(dims)
    moves = np.zeros(dims.move_shape, dtype=np.uint8)
    arms: dict[tuple[int, int], int] = {}
    for l, n in active.pairs():
        arm = state.posterior(l, n).sample(rng)
        arms[(l, n)] = arm
        moves[l, n] = arm_to_move(arm, dims.n_opportunities)
    return moves, arms


def mab_update(state: MabState, arms: dict[tuple[int, int], int], reward: Reward) -> MabState:
    for (l, n), arm in arms.items():
        state.posterior(l, n).update(arm, reward.xi)
    return state


def random_policy(active: ActiveSets, dims: InstanceDims, rng: np.random.Generator) -> np.ndarray:
    """Each active learner transmits on each opportunity with probability ``1/|A|``."""
    active.validate(dims)
    p = 1.0 / concatenated_cardinality(active)
    moves = np.zeros(dims.move_shape, dtype=np.uint8)
    for l, n in active.pairs():
        moves[l, n] = rng.random(dims.n_opportunities) < p
    return moves


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def run_mab(scenario, n_epochs: int, seed=None, env=None, state: MabState | None = None, callback=None):
    """Play and update the bandits for ``n_epochs`` epochs; returns ``(state, trace)``."""
    dims = scenario.dims
    state = state if state is not None else MabState(dims)
    env = env if env is not None else scenario.environment()
    env.dynamics.validate(max(n_epochs, 1))
    rng = _as_rng(seed)
    xi = np.zeros(n_epochs, dtype=np.int8)
    changes = np.zeros(n_epochs, dtype=bool)
    for t in range(n_epochs):
        changes[t] = env.is_change_epoch(t)
        active = env.step(t)
        moves, arms = mab_step(state, active, rng)
        reward = evaluate_success(active, moves, dims)
        mab_update(state, arms, reward)
        xi[t] = reward.xi
        if callback is not None:
            callback(t, active, moves, reward)
    return state, RewardTrace(xi, np.zeros(n_epochs), changes)


def run_random(scenario, n_epochs: int, seed=None, env=None, callback=None) -> RewardTrace:
    dims = scenario.dims
    env = env if env is not None else scenario.environment()
    env.dynamics.validate(max(n_epochs, 1))
    rng = _as_rng(seed)
    xi = np.zeros(n_epochs, dtype=np.int8)
    changes = np.zeros(n_epochs, dtype=bool)
    for t in range(n_epochs):
        changes[t] = env.is_change_epoch(t)
        active = env.step(t)
        moves = random_policy(active, dims, rng)
        reward = evaluate_success(active, moves, dims)
        xi[t] = reward.xi
        if callback is not None:
            callback(t, active, moves, reward)
    return RewardTrace(xi, np.zeros(n_epochs), changes)
