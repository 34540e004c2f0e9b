"""Reward traces and the curve summaries computed from them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RewardTrace:
    xi: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    explore_std: np.ndarray = field(default_factory=lambda: np.zeros(0))
    change_marker: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __len__(self) -> int:
        return len(self.xi)

    def moving_average(self, window: int = 100) -> np.ndarray:
        return moving_average(self.xi, window)

    def change_epochs(self) -> list[int]:
        return [int(e) for e in np.flatnonzero(self.change_marker)]


def moving_average(values, window: int = 100) -> np.ndarray:
    """Trailing mean over the last ``window`` values (fewer at the start)."""
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        return x
    c = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def final_value(xi, last: int = 1000) -> float | None:
    """Mean reward over the last ``last`` epochs."""
    x = np.asarray(xi, dtype=float)
    if len(x) == 0:
        return None
    return float(x[-last:].mean())


def epochs_to_fraction(curve, fraction: float = 0.5, reference: float | None = None) -> int | None:
    """First epoch at which ``curve`` reaches ``fraction`` of ``reference``.

    ``reference`` defaults to the last value of the curve.
    """
    c = np.asarray(curve, dtype=float)
    if len(c) == 0:
        return None
    target = fraction * (c[-1] if reference is None else reference)
    hit = np.flatnonzero(c >= target)
    return int(hit[0]) if len(hit) else None


def segment_bounds(n_epochs: int, change_epochs) -> list[tuple[int, int]]:
    edges = [0, *[int(e) for e in change_epochs if 0 < e < n_epochs], n_epochs]
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def recovery_epochs(curve, change_epochs, fraction: float = 0.9) -> list[int | None]:
    """Epochs after each change until the curve regains ``fraction`` of its pre-change level."""
    c = np.asarray(curve, dtype=float)
    out: list[int | None] = []
    for e in change_epochs:
        e = int(e)
        if e <= 0 or e >= len(c):
            out.append(None)
            continue
        target = fraction * c[e - 1]
        segment_end = next((int(x) for x in change_epochs if int(x) > e), len(c))
        hit = np.flatnonzero(c[e:segment_end] >= target)
        out.append(int(hit[0]) if len(hit) else None)
    return out


def trend_slope(xi) -> float:
    """Least-squares slope of the reward against the epoch index."""
    y = np.asarray(xi, dtype=float)
    if len(y) < 2:
        return 0.0
    t = np.arange(len(y), dtype=float)
    return float(np.polyfit(t, y, 1)[0])
