"""Per-(message, node) policy networks.

Each learner owns a small fully connected network ``1 -> 256 -> 128 -> M``
with ReLU hidden units and sigmoid outputs. The output ``p_m`` is the
probability of transmitting the learner's message on opportunity ``m``.

The parameters of all ``L * N`` learners are stored row-wise in a
:class:`PolicyBank`; :class:`MlpParams` is a view of one row, so updating a
learner never copies or touches another learner's memory.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.special import expit

from .core import InstanceDims, Reward
from .exceptions import NumericalStateError, StructuralError

HIDDEN_SIZES = (256, 128)
LEARNING_RATE = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LOGIT_CLAMP = 30.0
FLUSH_BELOW = 1e-30  # Adam moments below this are set to zero


class Layout:
    """Offsets of ``W1, b1, W2, b2, ...`` inside one flat parameter vector."""

    def __init__(self, n_outputs: int, hidden: tuple[int, ...] = HIDDEN_SIZES):
        self.widths = (1,) + tuple(hidden) + (n_outputs,)
        self.shapes = []
        self.layer_slices = []
        offset = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            start = offset
            self.shapes.append(((fan_out, fan_in), offset))
            offset += fan_out * fan_in
            self.shapes.append(((fan_out,), offset))
            offset += fan_out
            self.layer_slices.append(slice(start, offset))
        self.size = offset

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]

    def views(self, flat: np.ndarray) -> list[np.ndarray]:
        out = []
        for shape, offset in self.shapes:
            n = shape[0] * shape[1] if len(shape) == 2 else shape[0]
            out.append(flat[offset : offset + n].reshape(shape))
        return out

    def trainable_slices(self, frozen) -> list[slice]:
        """Contiguous parameter ranges of the layers not marked frozen."""
        out: list[slice] = []
        for sl, is_frozen in zip(self.layer_slices, frozen):
            if is_frozen:
                continue
            if out and out[-1].stop == sl.start:
                out[-1] = slice(out[-1].start, sl.stop)
            else:
                out.append(sl)
        return out


def init_flat(layout: Layout, rng: np.random.Generator, out: np.ndarray | None = None):
    """Fan-in scaled uniform weights ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases.

    Draws are made in float64 and cast, so the same seed gives the same
    network up to rounding whatever the storage dtype.
    """
    flat = np.zeros(layout.size) if out is None else out
    flat[:] = 0.0
    for (shape, offset) in layout.shapes[0::2]:
        fan_out, fan_in = shape
        bound = 1.0 / np.sqrt(fan_in)
        flat[offset : offset + fan_out * fan_in] = rng.uniform(-bound, bound, fan_out * fan_in)
    return flat


class MlpParams:
    """Parameters plus Adam moments of a single learner.

    ``theta``, ``m`` and ``v`` are flat vectors (usually rows of a bank) and
    ``frozen`` is a per-layer boolean mask shared with the owning bank.
    """

    def __init__(self, layout: Layout, theta, m, v, step, frozen):
        self.layout = layout
        self.theta = theta
        self.m = m
        self.v = v
        self._step = step  # 1-element array so the bank sees increments
        self.frozen = frozen
        self.weights = layout.views(theta)
        self._blocks = None

    def blocks(self):
        """Flat ``(theta, m, v)`` slices of every weight and bias block."""
        if self._blocks is None:
            self._blocks = [
                (self.theta[o : o + w.size], self.m[o : o + w.size], self.v[o : o + w.size])
                for w, (_, o) in zip(self.weights, self.layout.shapes)
            ]
        return self._blocks

    @classmethod
    def initialize(cls, n_outputs: int, rng, hidden=HIDDEN_SIZES, dtype=np.float64) -> "MlpParams":
        layout = Layout(n_outputs, tuple(hidden))
        theta = init_flat(layout, rng).astype(dtype)
        return cls(
            layout,
            theta,
            np.zeros(layout.size, dtype),
            np.zeros(layout.size, dtype),
            np.zeros(1, dtype=np.int64),
            np.zeros(layout.n_layers, dtype=bool),
        )

    @property
    def step(self) -> int:
        return int(self._step[0])

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.layout,
            self.theta.copy(),
            self.m.copy(),
            self.v.copy(),
            self._step.copy(),
            self.frozen.copy(),
        )


@dataclass
class ForwardTrace:
    s: float
    pre: list[np.ndarray]  # pre-activations of each layer; pre[-1] are the logits
    post: list[np.ndarray]  # post-activations of hidden layers
    probs: np.ndarray

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


def forward(params: MlpParams, s: float) -> ForwardTrace:
    w = params.weights
    dt = params.theta.dtype
    h = np.array([s], dtype=dt)
    pre, post = [], []
    n_layers = params.layout.n_layers
    check = 0.0
    for i in range(n_layers):
        W = w[2 * i]
        z = np.empty(W.shape[0], dt)
        a = np.empty(W.shape[0], dt)
        check += _dense(W, w[2 * i + 1], h, z, a)
        pre.append(z)
        if i < n_layers - 1:
            post.append(a)
            h = a
    # finite iff every pre-activation is (short of overflow, which is also a failure);
    # all layers are summed because the ReLU may map NaN to zero
    if not math.isfinite(check):
        raise NumericalStateError("non-finite network output")
    return ForwardTrace(float(s), pre, post, expit(pre[-1]))


# no "nnan"/"ninf": the finiteness check must survive the ReLU
_SAFE_FASTMATH = {"nsz", "arcp", "contract", "afn", "reassoc"}


@numba.njit(cache=True, fastmath=_SAFE_FASTMATH, error_model="numpy", boundscheck=False)
def _dense(W, b, h, z, a):
    """``z = W @ h + b`` and ``a = relu(z)``; returns ``sum(z)``."""
    total = 0.0
    for i in range(W.shape[0]):
        acc = b[i]
        row = W[i]
        for j in range(h.shape[0]):
            acc += row[j] * h[j]
        z[i] = acc
        a[i] = acc if acc > 0 else acc - acc
        total += acc
    return total


def sample_move(trace: ForwardTrace, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli draw per opportunity."""
    return (rng.random(trace.probs.shape[0]) < trace.probs).astype(np.uint8)


def log_prob(trace: ForwardTrace, move) -> float:
    """Bernoulli log-likelihood of ``move``; logits clamped to +-30."""
    z = np.clip(trace.logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    x = np.asarray(move, dtype=float)
    # log sigmoid(z) = -log(1 + e^-z),  log(1 - sigmoid(z)) = -log(1 + e^z)
    return float(-(x * np.logaddexp(0.0, -z) + (1 - x) * np.logaddexp(0.0, z)).sum())


def log_prob_gradient(params: MlpParams, trace: ForwardTrace, move, out=None) -> np.ndarray:
    """Gradient of :func:`log_prob` w.r.t. the flat parameter vector.

    Returned in the same flat layout as ``params.theta``.
    """
    layout = params.layout
    dtype = params.theta.dtype
    grad = np.empty(layout.size, dtype) if out is None else out
    g = layout.views(grad)
    w = params.weights
    n_layers = layout.n_layers
    delta = np.asarray(move, dtype=dtype) - trace.probs
    for i in range(n_layers - 1, -1, -1):
        inp = trace.post[i - 1] if i > 0 else np.array([trace.s], dtype)
        np.outer(delta, inp, out=g[2 * i])
        g[2 * i + 1][:] = delta
        if i > 0:
            delta = (w[2 * i].T @ delta) * (trace.pre[i - 1] > 0)
    if not np.isfinite(grad.sum()):
        raise NumericalStateError("non-finite log-likelihood gradient")
    return grad


def apply_update(
    params: MlpParams,
    gradient: np.ndarray,
    reward: Reward | int,
    learning_rate: float = LEARNING_RATE,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> MlpParams:
    """Reward-weighted Adam ascent step, in place.

    With ``xi = 0`` the update is skipped entirely: parameters, moments and
    the step counter are left untouched.
    """
    xi = reward.xi if isinstance(reward, Reward) else int(reward)
    if xi == 0:
        return params
    if gradient.shape != params.theta.shape:
        raise StructuralError(
            f"gradient of size {gradient.shape} does not match parameters {params.theta.shape}"
        )
    slices = params.layout.trainable_slices(params.frozen)
    if not slices:
        return params
    b1, b2 = betas
    params._step[0] += 1
    t = int(params._step[0])
    dt = params.theta.dtype.type
    step_size = dt(learning_rate / (1.0 - b1**t))
    inv_bc2_sqrt = dt(1.0 / np.sqrt(1.0 - b2**t))
    g = np.asarray(gradient, dtype=params.theta.dtype)
    for sl in slices:
        _adam_ascent(
            params.theta[sl], params.m[sl], params.v[sl], g[sl],
            step_size, dt(b1), dt(1.0 - b1), dt(b2), dt(1.0 - b2), inv_bc2_sqrt, dt(eps),
            dt(FLUSH_BELOW),
        )
    return params


def reinforce_update(
    params: MlpParams,
    trace: ForwardTrace,
    move,
    reward: Reward | int,
    learning_rate: float = LEARNING_RATE,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> MlpParams:
    """Same step as ``apply_update(log_prob_gradient(...))`` without the flat gradient.

    Weight gradients are outer products; they are formed inside the Adam
    loop instead of being written out first. Used on the training hot path.
    """
    xi = reward.xi if isinstance(reward, Reward) else int(reward)
    if xi == 0 or params.frozen.all():
        return params
    layout = params.layout
    dt = params.theta.dtype.type
    w = params.weights
    n_layers = layout.n_layers
    # backpropagate with the pre-update weights
    deltas = [None] * n_layers
    delta = np.asarray(move, dtype=params.theta.dtype) - trace.probs
    for i in range(n_layers - 1, -1, -1):
        deltas[i] = delta
        if i > 0 and not params.frozen[: i].all():
            delta = (w[2 * i].T @ delta) * (trace.pre[i - 1] > 0)
    if not np.isfinite(deltas[-1]).all():
        raise NumericalStateError("non-finite log-likelihood gradient")
    b1, b2 = betas
    params._step[0] += 1
    t = int(params._step[0])
    consts = (
        dt(learning_rate / (1.0 - b1**t)), dt(b1), dt(1.0 - b1), dt(b2), dt(1.0 - b2),
        dt(1.0 / np.sqrt(1.0 - b2**t)), dt(eps), dt(FLUSH_BELOW),
    )
    blocks = params.blocks()
    for i in range(n_layers):
        if params.frozen[i]:
            continue
        inp = trace.post[i - 1] if i > 0 else np.array([trace.s], params.theta.dtype)
        _adam_outer(*blocks[2 * i], deltas[i], inp, *consts)
        _adam_ascent(*blocks[2 * i + 1], deltas[i], *consts)
    return params


@numba.njit(cache=True, fastmath=True, error_model="numpy", boundscheck=False)
def _adam_outer(theta, m, v, rows, cols, step_size, b1, c1, b2, c2, inv_bc2_sqrt, eps, tiny):
    zero = tiny - tiny
    n = cols.shape[0]
    for i in range(rows.shape[0]):
        r = rows[i]
        th = theta[i * n : (i + 1) * n]
        mm = m[i * n : (i + 1) * n]
        vv = v[i * n : (i + 1) * n]
        for j in range(n):
            gi = r * cols[j]
            mi = b1 * mm[j] + c1 * gi
            vi = b2 * vv[j] + c2 * gi * gi
            mi = mi if abs(mi) > tiny else zero
            vi = vi if vi > tiny else zero
            mm[j] = mi
            vv[j] = vi
            th[j] += step_size * mi / (np.sqrt(vi) * inv_bc2_sqrt + eps)


@numba.njit(cache=True, fastmath=True, error_model="numpy", boundscheck=False)
def _adam_ascent(theta, m, v, g, step_size, b1, c1, b2, c2, inv_bc2_sqrt, eps, tiny):
    # scalars arrive in the array dtype and the loop spans whole arrays,
    # otherwise the float32 loop is not vectorised
    zero = tiny - tiny
    for i in range(theta.shape[0]):
        gi = g[i]
        mi = b1 * m[i] + c1 * gi
        vi = b2 * v[i] + c2 * gi * gi
        # flush decayed moments before they turn subnormal
        mi = mi if abs(mi) > tiny else zero
        vi = vi if vi > tiny else zero
        m[i] = mi
        v[i] = vi
        theta[i] += step_size * mi / (np.sqrt(vi) * inv_bc2_sqrt + eps)


def deterministic_move(params: MlpParams) -> np.ndarray:
    """Round the outputs at ``s = 0``; exactly 0.5 rounds down to silence."""
    return (forward(params, 0.0).probs > 0.5).astype(np.uint8)


class PolicyBank:
    """Parameters and optimiser state of all ``L * N`` learners.

    Learner ``(l, n)`` lives in row ``l * N + n``.
    """

    def __init__(self, dims: InstanceDims, seed=None, hidden=HIDDEN_SIZES, dtype=np.float32):
        self.dims = dims
        self.hidden = tuple(int(h) for h in hidden)
        self.layout = Layout(dims.n_opportunities, self.hidden)
        self.dtype = np.dtype(dtype)
        K, P = dims.n_learners, self.layout.size
        self.theta = np.zeros((K, P), self.dtype)
        self.m = np.zeros((K, P), self.dtype)
        self.v = np.zeros((K, P), self.dtype)
        self.steps = np.zeros(K, dtype=np.int64)
        self.frozen = np.zeros(self.layout.n_layers, dtype=bool)
        self._views: list[MlpParams] | None = None
        if seed is not None:
            self.reinitialize(seed)

    def reinitialize(self, seed) -> None:
        """Fresh weights and cleared optimiser state for every learner."""
        rng = np.random.default_rng(seed)
        row = np.zeros(self.layout.size)
        for k in range(self.theta.shape[0]):
            self.theta[k] = init_flat(self.layout, rng, out=row)
        self.reset_optimizer()

    def reset_optimizer(self) -> None:
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.steps[:] = 0

    def freeze_layers(self, layers) -> None:
        self.frozen[:] = False
        for i in layers:
            self.frozen[i] = True

    def index(self, l: int, n: int) -> int:
        return l * self.dims.n_nodes + n

    def learners(self) -> list[MlpParams]:
        if self._views is None:
            self._views = [
                MlpParams(
                    self.layout,
                    self.theta[k],
                    self.m[k],
                    self.v[k],
                    self.steps[k : k + 1],
                    self.frozen,
                )
                for k in range(self.theta.shape[0])
            ]
        return self._views

    def params(self, l: int, n: int) -> MlpParams:
        return self.learners()[self.index(l, n)]

    def copy(self) -> "PolicyBank":
        other = PolicyBank(self.dims, None, self.hidden, self.dtype)
        other.theta[:] = self.theta
        other.m[:] = self.m
        other.v[:] = self.v
        other.steps[:] = self.steps
        other.frozen[:] = self.frozen
        return other

    def deterministic_table(self) -> np.ndarray:
        """Precomputed ``(L, N, M)`` table of rounded moves at ``s = 0``."""
        L, N, M = self.dims.move_shape
        table = np.zeros((L * N, M), dtype=np.uint8)
        for k, p in enumerate(self.learners()):
            table[k] = deterministic_move(p)
        return table.reshape(L, N, M)

    def probabilities(self, s: float = 0.0) -> np.ndarray:
        L, N, M = self.dims.move_shape
        return np.stack([forward(p, s).probs for p in self.learners()]).reshape(L, N, M)


def save_snapshot(path, bank: PolicyBank, include_optimizer: bool = True, **meta) -> Path:
    """Write all parameter sets and metadata to ``.npz``.

    Adam moments are included unless ``include_optimizer`` is false, in
    which case a loaded bank starts with cleared moments.
    """
    path = Path(path)
    header = {
        "n_nodes": bank.dims.n_nodes,
        "n_messages": bank.dims.n_messages,
        "n_opportunities": bank.dims.n_opportunities,
        "hidden": list(bank.hidden),
        "optimizer": bool(include_optimizer),
        **meta,
    }
    arrays = {"theta": bank.theta, "steps": bank.steps, "frozen": bank.frozen}
    if include_optimizer:
        arrays.update(m=bank.m, v=bank.v)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_snapshot(path) -> tuple[PolicyBank, dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        dims = InstanceDims(header["n_nodes"], header["n_messages"], header["n_opportunities"])
        bank = PolicyBank(dims, None, tuple(header["hidden"]), data["theta"].dtype)
        if data["theta"].shape != bank.theta.shape:
            raise StructuralError("snapshot parameter shape does not match its header")
        bank.theta[:] = data["theta"]
        bank.frozen[:] = data["frozen"]
        if header.get("optimizer", True):
            bank.m[:] = data["m"]
            bank.v[:] = data["v"]
            bank.steps[:] = data["steps"]
    return bank, header
