"""Input coercion and checks shared by the estimators and the harness."""
from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from .core import ActiveSets, InstanceDims
from .exceptions import ConfigurationError, StructuralError
from .scenario import ScenarioSpec


def check_scenario(scenario) -> ScenarioSpec:
    """Accept a :class:`ScenarioSpec` or its dict form."""
    if isinstance(scenario, ScenarioSpec):
        return scenario
    if isinstance(scenario, Mapping):
        return ScenarioSpec.from_dict(dict(scenario))
    raise ConfigurationError(f"expected a ScenarioSpec or a mapping, got {type(scenario).__name__}")


def check_active_sets(active, dims: InstanceDims) -> list[ActiveSets]:
    """Coerce one or many active-set realisations and validate them against ``dims``.

    Accepts an :class:`ActiveSets`, a sequence of per-message node lists, or
    a sequence of either of those.
    """
    if isinstance(active, ActiveSets):
        items = [active]
    elif _is_single(active):
        items = [ActiveSets.of(*active)]
    elif isinstance(active, Sequence):
        items = [a if isinstance(a, ActiveSets) else ActiveSets.of(*a) for a in active]
    else:
        raise StructuralError(f"cannot interpret {type(active).__name__} as active sets")
    for a in items:
        a.validate(dims)
    return items


def _is_single(obj) -> bool:
    # [[0, 1], [2]] is one realisation; [[[0, 1], [2]], ...] is several
    if not isinstance(obj, Sequence) or isinstance(obj, (str, bytes)) or not obj:
        return False
    first = obj[0]
    return isinstance(first, (Sequence, np.ndarray)) and all(
        isinstance(v, (int, np.integer)) for v in first
    )


def check_seed_sequence(random_state) -> np.random.SeedSequence:
    if isinstance(random_state, np.random.SeedSequence):
        return random_state
    if random_state is None or isinstance(random_state, (int, np.integer)):
        return np.random.SeedSequence(random_state)
    raise ConfigurationError(f"random_state must be None or an integer, got {random_state!r}")


def check_positive_int(value, name: str, allow_zero: bool = False) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigurationError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {value}")
    return int(value)
