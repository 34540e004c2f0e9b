"""Decentralised learning of transmission strategies for shared messages.

``N`` nodes deliver ``L`` messages, each held by an unknown subset of nodes,
over ``M`` orthogonal opportunities. A message is delivered when some
opportunity carries exactly one copy of it and nothing else.
"""
from .baselines import MabState, mab_step, mab_update, random_policy
from .core import (
    ActiveSets,
    InstanceDims,
    Reward,
    concatenated_cardinality,
    evaluate_success,
    moves_from_assignment,
)
from .estimators import DUSL, RandomPolicy, ThompsonMAB
from .exceptions import (
    ConfigurationError,
    DomainError,
    InstanceTooLargeError,
    NumericalStateError,
    StructuralError,
)
from .oracle import (
    ExplicitDistribution,
    best_deterministic,
    check_degradation_bound,
    check_vertex_optimality,
    expected_success,
)
from .policy import PolicyBank, load_snapshot, save_snapshot
from .scenario import DirichletSpec, DynamicsSpec, ScenarioSpec, make_balanced, make_unbalanced
from .trainer import TrainConfig, adapt_online, evaluate_deterministic, train

__version__ = "0.1.0"

__all__ = [
    "ActiveSets", "InstanceDims", "Reward", "concatenated_cardinality", "evaluate_success",
    "moves_from_assignment", "DirichletSpec", "DynamicsSpec", "ScenarioSpec", "make_balanced",
    "make_unbalanced", "PolicyBank", "load_snapshot", "save_snapshot", "TrainConfig", "train",
    "evaluate_deterministic", "adapt_online", "MabState", "mab_step", "mab_update",
    "random_policy", "ExplicitDistribution", "expected_success", "best_deterministic",
    "check_vertex_optimality", "check_degradation_bound", "DUSL", "ThompsonMAB", "RandomPolicy",
    "ConfigurationError", "DomainError", "InstanceTooLargeError", "NumericalStateError",
    "StructuralError",
]
