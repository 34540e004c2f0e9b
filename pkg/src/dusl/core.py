"""Problem instance types and the collision-based success predicate.

Indices are 0-based everywhere in code. Reports and configs that show node,
message or opportunity labels use 1-based ``n1``, ``l1``, ``m1`` names via
:func:`label`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import StructuralError


@dataclass(frozen=True)
class InstanceDims:
    n_nodes: int
    n_messages: int
    n_opportunities: int

    def __post_init__(self):
        for name in ("n_nodes", "n_messages", "n_opportunities"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise StructuralError(f"{name} must be a positive integer, got {value!r}")
        if self.n_opportunities < self.n_messages:
            raise StructuralError(
                f"need at least as many opportunities as messages "
                f"(M={self.n_opportunities} < L={self.n_messages})"
            )

    @property
    def n_learners(self) -> int:
        """K = L * N, one learner per (message, node) pair."""
        return self.n_messages * self.n_nodes

    @property
    def move_shape(self) -> tuple[int, int, int]:
        return (self.n_messages, self.n_nodes, self.n_opportunities)


@dataclass(frozen=True)
class ActiveSets:
    """Per-message sets of active nodes for one time step.

    A node may hold several messages at once; it then appears in several sets.
    """

    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        normalized = []
        for l, members in enumerate(self.sets):
            members = tuple(int(n) for n in members)
            if len(members) == 0:
                raise StructuralError(f"active set of message {l} is empty")
            if len(set(members)) != len(members):
                raise StructuralError(f"duplicate node index in active set of message {l}")
            if min(members) < 0:
                raise StructuralError(f"negative node index in active set of message {l}")
            normalized.append(tuple(sorted(members)))
        object.__setattr__(self, "sets", tuple(normalized))

    @classmethod
    def of(cls, *sets: Iterable[int]) -> "ActiveSets":
        return cls(tuple(tuple(s) for s in sets))

    @property
    def n_messages(self) -> int:
        return len(self.sets)

    def validate(self, dims: InstanceDims) -> None:
        if self.n_messages != dims.n_messages:
            raise StructuralError(
                f"{self.n_messages} active sets given for {dims.n_messages} messages"
            )
        for l, members in enumerate(self.sets):
            if members[-1] >= dims.n_nodes:
                raise StructuralError(
                    f"node index {members[-1]} out of range for N={dims.n_nodes} (message {l})"
                )

    def mask(self, n_nodes: int) -> np.ndarray:
        """Boolean (L, N) activity mask."""
        out = np.zeros((self.n_messages, n_nodes), dtype=bool)
        for l, members in enumerate(self.sets):
            out[l, list(members)] = True
        return out

    def pairs(self) -> list[tuple[int, int]]:
        """Active (message, node) pairs in message-major order."""
        return [(l, n) for l, members in enumerate(self.sets) for n in members]

    def labels(self) -> list[list[str]]:
        return [[label("n", n) for n in members] for members in self.sets]


@dataclass(frozen=True)
class Reward:
    xi: int
    per_message_acks: tuple[int, ...]

    def __post_init__(self):
        expected = int(all(self.per_message_acks))
        if self.xi != expected:
            raise StructuralError("xi must equal the product of the per-message ACKs")


def label(kind: str, index: int) -> str:
    """1-based report label, e.g. ``label("m", 0) == "m1"``."""
    return f"{kind}{index + 1}"


def empty_moves(dims: InstanceDims) -> np.ndarray:
    return np.zeros(dims.move_shape, dtype=np.uint8)


def check_moves(moves, dims: InstanceDims) -> np.ndarray:
    """Validate a move tensor and return it as a uint8 array of shape (L, N, M)."""
    arr = np.asarray(moves)
    if arr.shape != dims.move_shape:
        raise StructuralError(f"move tensor has shape {arr.shape}, expected {dims.move_shape}")
    if arr.dtype != bool and not ((arr == 0) | (arr == 1)).all():
        raise StructuralError("move tensor entries must be 0 or 1")
    return arr.astype(np.uint8, copy=False)


def concatenated_cardinality(active: ActiveSets) -> int:
    """|A| with a node counted once per message it holds."""
    return sum(len(s) for s in active.sets)


def success_from_counts(per_message: np.ndarray) -> np.ndarray:
    """Per-message ACKs from an (L, M) array of transmission counts.

    ``per_message[l, m]`` counts active copies of message ``l`` on opportunity
    ``m``. Message ``l`` is decoded on ``m`` iff it is the only transmission
    there. Leading batch axes are allowed.
    """
    total = per_message.sum(axis=-2, keepdims=True)
    clean = (per_message == 1) & (total == 1)
    return clean.any(axis=-1)


def evaluate_success(active: ActiveSets, moves, dims: InstanceDims) -> Reward:
    active.validate(dims)
    x = check_moves(moves, dims)
    mask = active.mask(dims.n_nodes)
    if x[~mask].any():
        l, n, m = np.argwhere(x * ~mask[:, :, None])[0]
        raise StructuralError(
            f"inactive pair ({label('l', l)}, {label('n', n)}) transmits on {label('m', m)}"
        )
    acks = success_from_counts(x.sum(axis=1, dtype=np.int64))
    acks_t = tuple(int(a) for a in acks)
    return Reward(xi=int(all(acks_t)), per_message_acks=acks_t)


def masked(moves: np.ndarray, active: ActiveSets) -> np.ndarray:
    """Zero the planned moves of every (message, node) pair that is not active."""
    return moves * active.mask(moves.shape[1])[:, :, None].astype(moves.dtype)


def moves_from_assignment(
    dims: InstanceDims, assignment: dict[tuple[int, int], Sequence[int]]
) -> np.ndarray:
    """Build a move tensor from ``{(message, node): [opportunities]}``."""
    x = empty_moves(dims)
    for (l, n), opportunities in assignment.items():
        x[l, n, list(opportunities)] = 1
    return x
