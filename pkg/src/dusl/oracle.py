"""Exhaustive and Monte Carlo checks on small instances.

Move tensors are encoded as integers with bit ``(l * N + n) * M + m`` holding
``x[l, n, m]``; this encoding also defines the tie-break of
:func:`best_deterministic` (lowest integer wins).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import ActiveSets, InstanceDims, check_moves, evaluate_success, masked, success_from_counts
from .exceptions import DomainError, InstanceTooLargeError, StructuralError
from .scenario import DirichletSpec

MAX_ENUMERATION_BITS = 20
MAX_PATTERN_BITS = 14
TOLERANCE = 1e-9
_BATCH = 1 << 14


@dataclass(frozen=True)
class ExplicitDistribution:
    support: tuple[ActiveSets, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        support = tuple(self.support)
        probs = tuple(float(p) for p in self.probabilities)
        if len(support) != len(probs) or not support:
            raise StructuralError("support and probabilities must be nonempty and of equal length")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise StructuralError("probabilities must be non-negative and sum to 1")
        if len({a.sets for a in support}) != len(support):
            raise StructuralError("support entries must be distinct")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probabilities", probs)

    @classmethod
    def uniform(cls, support: Sequence[ActiveSets]) -> "ExplicitDistribution":
        return cls(tuple(support), tuple([1.0 / len(support)] * len(support)))

    @classmethod
    def point_mass(cls, active: ActiveSets) -> "ExplicitDistribution":
        return cls((active,), (1.0,))

    def validate(self, dims: InstanceDims) -> None:
        for a in self.support:
            a.validate(dims)

    def relevant_learners(self, dims: InstanceDims) -> list[int]:
        """Learner indices ``l * N + n`` active in at least one support entry."""
        seen = set()
        for a in self.support:
            for l, n in a.pairs():
                seen.add(l * dims.n_nodes + n)
        return sorted(seen)


@dataclass
class OracleReport:
    check: str
    instance: dict
    value: float
    passed: bool
    strategy: int | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def encode_moves(moves) -> int:
    bits = np.asarray(moves, dtype=np.uint8).ravel()
    return int(sum(1 << i for i in np.flatnonzero(bits)))


def decode_moves(code: int, dims: InstanceDims) -> np.ndarray:
    n_bits = dims.n_learners * dims.n_opportunities
    bits = np.array([(code >> i) & 1 for i in range(n_bits)], dtype=np.uint8)
    return bits.reshape(dims.move_shape)


def expected_success(strategy, dist: ExplicitDistribution, dims: InstanceDims) -> float:
    """Success probability of a fixed move tensor, masked by each active set."""
    x = check_moves(strategy, dims)
    dist.validate(dims)
    total = 0.0
    for a, p in zip(dist.support, dist.probabilities):
        total += p * evaluate_success(a, masked(x, a), dims).xi
    return total


def _batch_success(bits: np.ndarray, free: list[int], dist, dims) -> np.ndarray:
    """Expected success of every candidate in ``bits`` (rows over the free learners)."""
    L, N, M = dims.move_shape
    B = bits.shape[0]
    full = np.zeros((B, dims.n_learners, M), dtype=np.uint8)
    full[:, free] = bits.reshape(B, len(free), M)
    full = full.reshape(B, L, N, M)
    value = np.zeros(B)
    for a, p in zip(dist.support, dist.probabilities):
        mask = a.mask(N)
        counts = (full * mask[None, :, :, None]).sum(axis=2, dtype=np.int64)
        value += p * success_from_counts(counts).all(axis=-1)
    return value


def _candidate_bits(codes: np.ndarray, n_bits: int) -> np.ndarray:
    return ((codes[:, None] >> np.arange(n_bits)) & 1).astype(np.uint8)


def best_deterministic(
    dist: ExplicitDistribution,
    dims: InstanceDims,
    max_transmissions_per_node: int | None = None,
) -> tuple[np.ndarray, float]:
    """Exhaustive argmax of :func:`expected_success`.

    Learners never active under ``dist`` cannot affect the value and are
    held silent; the remaining bits are enumerated, at most
    ``2**MAX_ENUMERATION_BITS`` candidates. ``max_transmissions_per_node``
    restricts the search to strategies where every node sends at most that
    many copies in total (over all messages).
    """
    dist.validate(dims)
    free = dist.relevant_learners(dims)
    M, N = dims.n_opportunities, dims.n_nodes
    n_bits = len(free) * M
    if n_bits > MAX_ENUMERATION_BITS:
        raise InstanceTooLargeError(
            f"{n_bits} free move bits exceed the enumeration cap of {MAX_ENUMERATION_BITS} "
            f"(2^{MAX_ENUMERATION_BITS} candidates)"
        )
    node_of = np.array([k % N for k in free])
    best_code, best_value = 0, -1.0
    for start in range(0, 1 << n_bits, _BATCH):
        codes = np.arange(start, min(start + _BATCH, 1 << n_bits), dtype=np.int64)
        bits = _candidate_bits(codes, n_bits)
        values = _batch_success(bits, free, dist, dims)
        if max_transmissions_per_node is not None:
            per_learner = bits.reshape(len(codes), len(free), M).sum(axis=2)
            per_node = np.zeros((len(codes), N), dtype=np.int64)
            np.add.at(per_node.T, node_of, per_learner.T)
            values = np.where((per_node <= max_transmissions_per_node).all(axis=1), values, -1.0)
        i = int(np.argmax(values))  # first maximum = lowest code in this batch
        if values[i] > best_value + TOLERANCE:
            best_code, best_value = int(codes[i]), float(values[i])
    if best_value < 0:
        raise DomainError("no strategy satisfies the transmission restriction")
    bits = _candidate_bits(np.array([best_code]), n_bits)[0]
    x = np.zeros((dims.n_learners, M), dtype=np.uint8)
    x[free] = bits.reshape(len(free), M)
    return x.reshape(dims.move_shape), best_value


def success_table(dist: ExplicitDistribution, dims: InstanceDims) -> np.ndarray:
    """``omega[X]`` for every move tensor, indexed by its integer encoding."""
    n_bits = dims.n_learners * dims.n_opportunities
    if n_bits > MAX_ENUMERATION_BITS:
        raise InstanceTooLargeError(
            f"{n_bits} move bits exceed the enumeration cap of {MAX_ENUMERATION_BITS}"
        )
    dist.validate(dims)
    everyone = list(range(dims.n_learners))
    out = np.empty(1 << n_bits)
    for start in range(0, 1 << n_bits, _BATCH):
        codes = np.arange(start, min(start + _BATCH, 1 << n_bits), dtype=np.int64)
        out[start : start + len(codes)] = _batch_success(
            _candidate_bits(codes, n_bits), everyone, dist, dims
        )
    return out


def mixture_weights(per_learner: Sequence[np.ndarray]) -> np.ndarray:
    """Joint law of independent per-learner move distributions.

    ``per_learner[k]`` is a distribution over the ``2**M`` moves of learner
    ``k``; learner ``k`` occupies the ``k``-th block of ``M`` bits, so the
    joint vector is ``kron(phi[K-1], ..., phi[0])``.
    """
    out = np.ones(1)
    for phi in per_learner:
        out = np.kron(np.asarray(phi, dtype=float), out)
    return out


def check_vertex_optimality(
    dist: ExplicitDistribution,
    dims: InstanceDims,
    n_random_mixtures: int = 1000,
    rng=None,
) -> OracleReport:
    """No product-form stochastic strategy beats the best deterministic one."""
    rng = np.random.default_rng(rng)
    omega = success_table(dist, dims)
    best = float(omega.max())
    n_moves = 1 << dims.n_opportunities
    worst_gap = -np.inf
    for _ in range(n_random_mixtures):
        phis = rng.dirichlet(np.ones(n_moves), size=dims.n_learners)
        value = float(mixture_weights(phis) @ omega)
        worst_gap = max(worst_gap, value - best)
    return OracleReport(
        check="vertex_optimality",
        instance={"dims": asdict(dims), "support_size": len(dist.support)},
        value=best,
        passed=bool(worst_gap <= TOLERANCE),
        strategy=int(np.argmax(omega)),
        details={"n_mixtures": n_random_mixtures, "max_excess": float(worst_gap)},
    )


def pattern_success(strategy, dims: InstanceDims) -> np.ndarray:
    """``xi`` of a fixed strategy under each of the ``2**K`` activity patterns.

    Bit ``l * N + n`` of the pattern index marks learner ``(l, n)`` active. A
    pattern that leaves some message with no active node scores 0.
    """
    K = dims.n_learners
    if K > MAX_PATTERN_BITS:
        raise InstanceTooLargeError(f"K={K} exceeds the pattern cap of {MAX_PATTERN_BITS}")
    x = check_moves(strategy, dims)
    L, N, M = dims.move_shape
    idx = np.arange(1 << K, dtype=np.int64)
    active = ((idx[:, None] >> np.arange(K)) & 1).astype(np.uint8).reshape(-1, L, N)
    counts = (active[..., None] * x[None]).sum(axis=2, dtype=np.int64)
    ok = success_from_counts(counts).all(axis=-1)
    return (ok & active.any(axis=2).all(axis=1)).astype(float)


@dataclass
class DegradationResult:
    empirical: float
    bound: float
    standard_error: float
    n_pairs: int

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound + 3 * self.standard_error


def degradation_bound(eta: float, min_concentration: float, K: int) -> float:
    return 2.0 / (eta**2 * (1.0 + min_concentration * 2**K))


def check_degradation_bound(
    dims: InstanceDims,
    concentration: DirichletSpec,
    strategy,
    eta: float,
    n_pairs: int = 10_000,
    rng=None,
) -> DegradationResult:
    """Monte Carlo estimate of P(|xi' - xi''| >= eta) for p', p'' i.i.d. Dirichlet.

    The standard error is the binomial one evaluated at the bound.
    """
    if not 0 < eta <= 1:
        raise DomainError(f"eta must lie in (0, 1], got {eta}")
    K = dims.n_learners
    n_outcomes = 1 << K
    if len(concentration.concentration) != n_outcomes:
        raise StructuralError(f"need {n_outcomes} concentration parameters, got {len(concentration.concentration)}")
    rng = np.random.default_rng(rng)
    s = pattern_success(strategy, dims)
    alpha = np.asarray(concentration.concentration, dtype=float)
    xi1 = rng.dirichlet(alpha, size=n_pairs) @ s
    xi2 = rng.dirichlet(alpha, size=n_pairs) @ s
    empirical = float(np.mean(np.abs(xi1 - xi2) >= eta))
    bound = degradation_bound(eta, concentration.min_concentration, K)
    capped = min(bound, 1.0)
    se = float(np.sqrt(capped * (1 - capped) / n_pairs))
    return DegradationResult(empirical, bound, se, n_pairs)


def dirichlet_aggregation(
    dims: InstanceDims, concentration: DirichletSpec, strategy, n_draws: int = 10_000, rng=None
) -> tuple[float, float, float]:
    """Empirical mean of ``xi'`` next to ``alpha_S / (alpha_S + alpha_F)``.

    Returns ``(empirical, expected, standard_error)``.
    """
    rng = np.random.default_rng(rng)
    s = pattern_success(strategy, dims)
    alpha = np.asarray(concentration.concentration, dtype=float)
    xi = rng.dirichlet(alpha, size=n_draws) @ s
    a_s, a0 = float(alpha @ s), float(alpha.sum())
    expected = a_s / a0
    var = expected * (1 - expected) / (a0 + 1)  # Beta(alpha_S, alpha_F) variance
    return float(xi.mean()), expected, float(np.sqrt(var / n_draws))


# -- bundled checks --------------------------------------------------------


def fig1_instance():
    """Two messages, four nodes, three opportunities.

    Nodes 0 and 1 only ever hold message 0, nodes 2 and 3 only message 1.
    The strategy repeats node 0's copy on two opportunities; it delivers
    both messages on every one of the four listed active sets, which no
    strategy with one transmission per node can do.
    """
    from .core import moves_from_assignment

    dims = InstanceDims(n_nodes=4, n_messages=2, n_opportunities=3)
    support = (
        ActiveSets.of([1], [2]),
        ActiveSets.of([1], [3]),
        ActiveSets.of([0, 1], [3]),
        ActiveSets.of([0], [2, 3]),
    )
    strategy = moves_from_assignment(dims, {(0, 0): [0, 1], (0, 1): [0], (1, 2): [1], (1, 3): [2]})
    return dims, ExplicitDistribution.uniform(support), strategy


def random_instance(rng: np.random.Generator, max_bits: int = 12, max_support: int = 4):
    """A random tiny instance with ``L * N * M <= max_bits`` and a random explicit law."""
    while True:
        L = int(rng.integers(1, 3))
        M = int(rng.integers(L, 4))
        N = int(rng.integers(1, 5))
        if L * N * M <= max_bits:
            break
    dims = InstanceDims(N, L, M)
    support: list[ActiveSets] = []
    seen = set()
    for _ in range(int(rng.integers(1, max_support + 1))):
        sets = tuple(
            tuple(int(n) for n in np.flatnonzero(row)) or (int(rng.integers(N)),)
            for row in rng.random((L, N)) < 0.5
        )
        a = ActiveSets(sets)
        if a.sets not in seen:
            seen.add(a.sets)
            support.append(a)
    probs = rng.dirichlet(np.ones(len(support)))
    probs[-1] = 1.0 - probs[:-1].sum()
    return dims, ExplicitDistribution(tuple(support), tuple(probs))


def run_checks(
    seed: int = 0,
    fig1: bool = True,
    vertex_instances: int = 20,
    vertex_mixtures: int = 1000,
    vertex_max_bits: int = 12,
    degradation_strategies: int = 5,
    degradation_nodes: int = 3,
    degradation_messages: int = 2,
    degradation_eta: float = 0.3,
    degradation_alpha: float = 1.0,
    degradation_pairs: int = 10_000,
) -> list[OracleReport]:
    """The standing theory checks as a list of reports."""
    rng = np.random.default_rng(seed)
    reports: list[OracleReport] = []
    if fig1:
        dims, dist, strategy = fig1_instance()
        per_set = [evaluate_success(a, masked(strategy, a), dims).xi for a in dist.support]
        value = expected_success(strategy, dist, dims)
        _, single = best_deterministic(dist, dims, max_transmissions_per_node=1)
        reports.append(OracleReport(
            check="fig1_repetition",
            instance={"dims": asdict(dims), "support_size": len(dist.support)},
            value=value,
            passed=bool(all(per_set) and value == 1.0 and single < 1.0),
            strategy=encode_moves(strategy),
            details={"per_set_xi": per_set, "best_single_transmission_value": single},
        ))
    for _ in range(vertex_instances):
        dims, dist = random_instance(rng, vertex_max_bits)
        reports.append(check_vertex_optimality(dist, dims, vertex_mixtures, rng))
    if degradation_strategies:
        dims = InstanceDims(degradation_nodes, degradation_messages, max(degradation_messages, 2))
        alpha = DirichletSpec.flat(1 << dims.n_learners, degradation_alpha)
        for _ in range(degradation_strategies):
            strategy = rng.integers(0, 2, dims.move_shape).astype(np.uint8)
            r = check_degradation_bound(dims, alpha, strategy, degradation_eta, degradation_pairs, rng)
            reports.append(OracleReport(
                check="degradation_bound",
                instance={"dims": asdict(dims), "alpha": degradation_alpha, "eta": degradation_eta},
                value=r.empirical,
                passed=r.passed,
                strategy=encode_moves(strategy),
                details={"bound": r.bound, "standard_error": r.standard_error, "n_pairs": r.n_pairs},
            ))
    return reports
