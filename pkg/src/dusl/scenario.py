"""Generative models of node activation.

Two pattern families produce the per-message active sets:

* ``conditional``: a random activation tree per message. Ancestral sampling
  walks the tree depth-first from a root, choosing each next node from the
  conditional table of the most recent node that still has unselected
  children, until the configured set size is reached.
* ``general``: per-message node probabilities ``d_l`` drawn from a flat
  Dirichlet; the active set is the set of distinct nodes hit by ``N_l``
  categorical draws.

An ``explicit`` family (a finite list of joint active sets with
probabilities) covers small hand-built instances.

:class:`Environment` turns a :class:`ScenarioSpec` into a per-epoch stream of
:class:`~dusl.core.ActiveSets`, applying scheduled distribution changes and
temporal persistence of active sets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ActiveSets, InstanceDims
from .exceptions import ConfigurationError

FAMILIES = ("conditional", "general", "explicit")


def branching_cap(level: int) -> int:
    """Maximum number of children of a tree node at ``level`` (roots are level 1)."""
    if level <= 4:
        return 4
    if level <= 8:
        return 3
    return 2


@dataclass(frozen=True)
class DirichletSpec:
    concentration: tuple[float, ...]

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.concentration)
        if len(alpha) < 1:
            raise ConfigurationError("Dirichlet needs at least one concentration parameter")
        if not all(np.isfinite(a) and a > 0 for a in alpha):
            raise ConfigurationError("Dirichlet concentration parameters must be finite and > 0")
        object.__setattr__(self, "concentration", alpha)

    @classmethod
    def flat(cls, size: int, value: float = 1.0) -> "DirichletSpec":
        return cls((value,) * size)

    @property
    def min_concentration(self) -> float:
        return min(self.concentration)

    @property
    def total(self) -> float:
        return float(sum(self.concentration))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        return sample_dirichlet(self, rng, size)


def sample_dirichlet(spec: DirichletSpec, rng: np.random.Generator, size: int | None = None):
    """Draw from Dir(alpha) by normalising independent Gamma(alpha_i, 1) variates."""
    alpha = np.asarray(spec.concentration)
    shape = alpha.shape if size is None else (size,) + alpha.shape
    g = rng.standard_gamma(np.broadcast_to(alpha, shape))
    total = g.sum(axis=-1, keepdims=True)
    # all-zero rows only occur for tiny alphas; fall back to the largest-alpha vertex
    zero = total[..., 0] == 0
    if np.any(zero):
        g[zero, int(np.argmax(alpha))] = 1.0
        total = g.sum(axis=-1, keepdims=True)
    return g / total


# -- conditional activation ------------------------------------------------


@dataclass
class ActivationTree:
    """A random forest over the node set with conditional activation tables.

    ``child_weights[j]`` is the table of node ``j`` over ``children[j]``;
    ``root_weights`` is the table over ``roots``. Weights need not be
    normalised but must be non-negative.
    """

    roots: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]
    level: tuple[int, ...]
    root_weights: np.ndarray
    child_weights: list[np.ndarray]

    @property
    def n_nodes(self) -> int:
        return len(self.children)

    @classmethod
    def random(
        cls,
        n_nodes: int,
        rng: np.random.Generator,
        n_roots: int = 4,
        uniform_cpt: bool = False,
    ) -> "ActivationTree":
        order = rng.permutation(n_nodes)
        n_roots = min(n_roots, n_nodes)
        roots = tuple(int(v) for v in order[:n_roots])
        children: list[list[int]] = [[] for _ in range(n_nodes)]
        level = [0] * n_nodes
        for r in roots:
            level[r] = 1
        queue = list(roots)
        nxt = n_roots
        head = 0
        while nxt < n_nodes:
            parent = queue[head]
            head += 1
            cap = branching_cap(level[parent])
            k = min(int(rng.integers(1, cap + 1)), n_nodes - nxt)
            for child in order[nxt : nxt + k]:
                child = int(child)
                children[parent].append(child)
                level[child] = level[parent] + 1
                queue.append(child)
            nxt += k

        def table(size: int) -> np.ndarray:
            if size == 0:
                return np.zeros(0)
            if uniform_cpt:
                return np.full(size, 1.0 / size)
            return sample_dirichlet(DirichletSpec.flat(size), rng)

        return cls(
            roots=roots,
            children=tuple(tuple(c) for c in children),
            level=tuple(level),
            root_weights=table(len(roots)),
            child_weights=[table(len(c)) for c in children],
        )

    def __post_init__(self):
        # plain-float copies for the per-draw loop
        self._roots = list(zip(self.roots, np.asarray(self.root_weights, float).tolist()))
        self._children = [
            list(zip(c, np.asarray(w, float).tolist()))
            for c, w in zip(self.children, self.child_weights)
        ]

    def sample(self, size: int, rng: np.random.Generator) -> tuple[int, ...]:
        if not 1 <= size <= self.n_nodes:
            raise ConfigurationError(
                f"cannot draw an active set of size {size} from {self.n_nodes} nodes"
            )
        selected: list[int] = []
        taken = [False] * self.n_nodes
        while len(selected) < size:
            node = self._next(selected, taken, rng)
            selected.append(node)
            taken[node] = True
        return tuple(sorted(selected))

    def _next(self, selected, taken, rng) -> int:
        # most recently selected node that still has unselected, positively weighted children
        for j in reversed(selected):
            pick = _draw_excluding(self._children[j], taken, rng)
            if pick is not None:
                return pick
        pick = _draw_excluding(self._roots, taken, rng)
        if pick is not None:
            return pick
        remaining = np.flatnonzero(~np.asarray(taken))
        return int(rng.choice(remaining))


def _draw_excluding(table, taken, rng) -> int | None:
    """Draw from ``[(node, weight), ...]`` renormalised over nodes not yet taken."""
    total = 0.0
    for node, w in table:
        if not taken[node]:
            total += w
    if total <= 0:
        return None
    u = rng.random() * total
    acc, last = 0.0, None
    for node, w in table:
        if taken[node] or w <= 0:
            continue
        acc += w
        last = node
        if u < acc:
            return node
    return last


@dataclass
class ConditionalPattern:
    trees: list[ActivationTree]
    sizes: tuple[int, ...]

    @classmethod
    def random(cls, n_nodes, sizes, rng, n_roots=4, uniform_cpt=False) -> "ConditionalPattern":
        for l, size in enumerate(sizes):
            if not 1 <= size <= n_nodes:
                raise ConfigurationError(
                    f"active set size {size} for message {l} infeasible with N={n_nodes}"
                )
        trees = [ActivationTree.random(n_nodes, rng, n_roots, uniform_cpt) for _ in sizes]
        return cls(trees, tuple(int(s) for s in sizes))

    def sample_message(self, message: int, rng) -> tuple[int, ...]:
        return self.trees[message].sample(self.sizes[message], rng)


def sample_conditional(pattern: ConditionalPattern, message: int, rng) -> tuple[int, ...]:
    return pattern.sample_message(message, rng)


# -- general activation ----------------------------------------------------


@dataclass
class GeneralPattern:
    probabilities: np.ndarray  # (L, N), rows on the simplex
    draws: tuple[int, ...]

    def __post_init__(self):
        d = np.asarray(self.probabilities, dtype=float)
        if d.ndim != 2 or len(self.draws) != d.shape[0]:
            raise ConfigurationError("need one probability row and one draw count per message")
        if (d < 0).any() or not np.allclose(d.sum(axis=1), 1.0, atol=1e-12):
            raise ConfigurationError("each selection-probability row must lie on the simplex")
        if any(k < 1 for k in self.draws):
            raise ConfigurationError("draw counts must be >= 1")
        self.probabilities = d
        self._cdf = np.cumsum(d, axis=1)

    @classmethod
    def random(cls, n_nodes, draws, rng, concentration: float = 1.0) -> "GeneralPattern":
        spec = DirichletSpec.flat(n_nodes, concentration)
        d = np.stack([sample_dirichlet(spec, rng) for _ in draws])
        return cls(d, tuple(int(k) for k in draws))

    def sample_message(self, message: int, rng) -> tuple[int, ...]:
        cdf = self._cdf[message]
        u = rng.random(self.draws[message]) * cdf[-1]
        hits = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
        return tuple(int(v) for v in np.unique(hits))


def sample_general(pattern: GeneralPattern, message: int, rng) -> tuple[int, ...]:
    return pattern.sample_message(message, rng)


# -- explicit distributions ------------------------------------------------


@dataclass
class ExplicitPattern:
    support: list[ActiveSets]
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if len(self.support) != len(p) or len(p) == 0:
            raise ConfigurationError("support and probabilities must be non-empty and aligned")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError("probabilities must be non-negative and sum to 1")
        if len(set(self.support)) != len(self.support):
            raise ConfigurationError("support entries must be distinct")
        self.probabilities = p
        self._cdf = np.cumsum(p)

    def sample(self, rng) -> ActiveSets:
        i = min(int(np.searchsorted(self._cdf, rng.random() * self._cdf[-1], side="right")),
                len(self.support) - 1)
        return self.support[i]

    def sample_message(self, message: int, rng) -> tuple[int, ...]:
        return self.sample(rng).sets[message]


# -- scenario specification and environment --------------------------------


@dataclass(frozen=True)
class DynamicsSpec:
    """Scheduled distribution changes and temporal persistence.

    At each epoch in ``change_epochs`` the pattern is redrawn from the same
    family (fresh tree and tables, or fresh ``d_l``) with unchanged set
    sizes. After every fresh draw of ``A_l`` a persistence length ``b`` is
    drawn uniformly from ``{0, ..., persistence_max}`` and ``A_l`` is kept for
    the next ``b`` epochs.
    """

    change_epochs: tuple[int, ...] = ()
    persistence_max: int = 0

    def __post_init__(self):
        epochs = tuple(int(e) for e in self.change_epochs)
        if any(e < 0 for e in epochs) or any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigurationError("change epochs must be non-negative and strictly increasing")
        if self.persistence_max < 0:
            raise ConfigurationError("persistence_max must be >= 0")
        object.__setattr__(self, "change_epochs", epochs)

    def validate(self, n_epochs: int) -> None:
        if self.change_epochs and self.change_epochs[-1] >= n_epochs:
            raise ConfigurationError(
                f"change epoch {self.change_epochs[-1]} outside run of {n_epochs} epochs"
            )

    @classmethod
    def evenly_spaced(cls, n_changes: int, n_epochs: int, persistence_max: int = 0):
        """``n_changes`` changes splitting ``n_epochs`` into equal segments."""
        seg = n_epochs // (n_changes + 1)
        return cls(tuple(seg * (i + 1) for i in range(n_changes)), persistence_max)


@dataclass(frozen=True)
class ScenarioSpec:
    dims: InstanceDims
    family: str = "conditional"
    active_sizes: tuple[int, ...] = ()
    seed: int = 0
    dynamics: DynamicsSpec = field(default_factory=DynamicsSpec)
    uniform_cpt: bool = False
    n_roots: int = 4
    support: tuple[ActiveSets, ...] = ()
    probabilities: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown pattern family {self.family!r}")
        sizes = tuple(int(s) for s in self.active_sizes)
        object.__setattr__(self, "active_sizes", sizes)
        L, N = self.dims.n_messages, self.dims.n_nodes
        if self.family == "explicit":
            if not self.support:
                raise ConfigurationError("explicit family needs a support")
            for a in self.support:
                a.validate(self.dims)
            ExplicitPattern(list(self.support), np.asarray(self.probabilities))
            return
        if len(sizes) != L:
            raise ConfigurationError(f"need {L} active-set sizes, got {len(sizes)}")
        if any(s < 1 for s in sizes):
            raise ConfigurationError("active-set sizes must be >= 1")
        if self.family == "conditional" and max(sizes) > N:
            raise ConfigurationError(f"active-set size {max(sizes)} exceeds N={N}")

    def build_pattern(self, rng: np.random.Generator):
        N = self.dims.n_nodes
        if self.family == "conditional":
            return ConditionalPattern.random(
                N, self.active_sizes, rng, self.n_roots, self.uniform_cpt
            )
        if self.family == "general":
            return GeneralPattern.random(N, self.active_sizes, rng)
        return ExplicitPattern(list(self.support), np.asarray(self.probabilities))

    def environment(
        self, seed: int | np.random.SeedSequence | None = None, stream: int = 0
    ) -> "Environment":
        """A fresh activation process; ``seed`` defaults to the spec's own seed.

        Processes with the same seed share the initial pattern; a nonzero
        ``stream`` gives them independent active-set draws.
        """
        return Environment(self, self.seed if seed is None else seed, stream)

    def with_dynamics(self, dynamics: DynamicsSpec) -> "ScenarioSpec":
        return _replace(self, dynamics=dynamics)

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return _replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        out = {
            "n_nodes": self.dims.n_nodes,
            "n_messages": self.dims.n_messages,
            "n_opportunities": self.dims.n_opportunities,
            "family": self.family,
            "active_sizes": list(self.active_sizes),
            "seed": self.seed,
            "change_epochs": list(self.dynamics.change_epochs),
            "persistence_max": self.dynamics.persistence_max,
            "uniform_cpt": self.uniform_cpt,
            "n_roots": self.n_roots,
        }
        if self.family == "explicit":
            out["support"] = [[list(s) for s in a.sets] for a in self.support]
            out["probabilities"] = list(self.probabilities)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(
            dims=InstanceDims(d["n_nodes"], d["n_messages"], d["n_opportunities"]),
            family=d.get("family", "conditional"),
            active_sizes=tuple(d.get("active_sizes", ())),
            seed=int(d.get("seed", 0)),
            dynamics=DynamicsSpec(
                tuple(d.get("change_epochs", ())), int(d.get("persistence_max", 0))
            ),
            uniform_cpt=bool(d.get("uniform_cpt", False)),
            n_roots=int(d.get("n_roots", 4)),
            support=tuple(ActiveSets.of(*a) for a in d.get("support", ())),
            probabilities=tuple(float(p) for p in d.get("probabilities", ())),
        )


def _replace(spec: ScenarioSpec, **changes) -> ScenarioSpec:
    from dataclasses import replace

    return replace(spec, **changes)


def make_balanced(
    n_nodes: int,
    n_opportunities: int,
    n_messages: int,
    size: int,
    family: str = "conditional",
    seed: int = 0,
    dynamics: DynamicsSpec | None = None,
) -> ScenarioSpec:
    return make_unbalanced(n_nodes, n_opportunities, (size,) * n_messages, family, seed, dynamics)


def make_unbalanced(
    n_nodes: int,
    n_opportunities: int,
    sizes: Sequence[int],
    family: str = "conditional",
    seed: int = 0,
    dynamics: DynamicsSpec | None = None,
) -> ScenarioSpec:
    """Scenario whose messages have individually configured set sizes."""
    dims = InstanceDims(n_nodes, len(sizes), n_opportunities)
    return ScenarioSpec(
        dims=dims,
        family=family,
        active_sizes=tuple(sizes),
        seed=seed,
        dynamics=dynamics or DynamicsSpec(),
    )


def explicit_scenario(
    dims: InstanceDims, support: Sequence[ActiveSets], probabilities=None, seed: int = 0
) -> ScenarioSpec:
    if probabilities is None:
        probabilities = [1.0 / len(support)] * len(support)
    return ScenarioSpec(
        dims=dims,
        family="explicit",
        seed=seed,
        support=tuple(support),
        probabilities=tuple(float(p) for p in probabilities),
    )


class Environment:
    """Stateful activation process for one run.

    Two private streams are derived from the seed: one for drawing (and
    redrawing) the pattern, one for sampling active sets and persistence.
    """

    def __init__(self, spec: ScenarioSpec, seed, stream: int = 0):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        pattern_ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (0,))
        sample_key = (1,) if stream == 0 else (1, int(stream))
        sample_ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + sample_key)
        self.spec = spec
        self.dynamics = spec.dynamics
        self._pattern_rng = np.random.default_rng(pattern_ss)
        self._rng = np.random.default_rng(sample_ss)
        self.pattern = spec.build_pattern(self._pattern_rng)
        self.n_changes = 0
        self._changes = set(spec.dynamics.change_epochs)
        self._cached: list[tuple[int, ...] | None] = [None] * spec.dims.n_messages
        self._hold = [0] * spec.dims.n_messages
        self._last_epoch = -1

    def is_change_epoch(self, epoch: int) -> bool:
        return epoch in self._changes

    def step(self, epoch: int) -> ActiveSets:
        if epoch <= self._last_epoch:
            raise ConfigurationError(
                f"epochs must increase (got {epoch} after {self._last_epoch})"
            )
        self._last_epoch = epoch
        if epoch in self._changes:
            self.pattern = self.spec.build_pattern(self._pattern_rng)
            self.n_changes += 1
            self._cached = [None] * len(self._cached)
            self._hold = [0] * len(self._hold)
        b_max = self.dynamics.persistence_max
        L = len(self._cached)
        if b_max == 0 and isinstance(self.pattern, ExplicitPattern):
            return self.pattern.sample(self._rng)
        sets = []
        for l in range(L):
            if self._cached[l] is not None and self._hold[l] > 0:
                self._hold[l] -= 1
            else:
                self._cached[l] = self.pattern.sample_message(l, self._rng)
                self._hold[l] = int(self._rng.integers(0, b_max + 1)) if b_max else 0
            sets.append(self._cached[l])
        return ActiveSets(tuple(sets))


def step_environment(env: Environment, epoch: int) -> ActiveSets:
    return env.step(epoch)
