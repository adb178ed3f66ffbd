"""Discrete-time systems, interconnections and measurement functions.

A :class:`DiscreteSystem` wraps a state-update map ``x+ = g(x, u)``.  Update
maps are expected to be vectorized over leading axes (``x`` of shape
``(..., n)``, ``u`` of shape ``(..., m)``) so that batches of initial
conditions can be simulated in one sweep; pass ``vectorized=False`` for
maps that only handle a single state.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionMismatch", "HasInputs", "DiscreteSystem", "NetworkTopology",
    "MeasurementFunction", "MonotonicNorm", "InputSignal",
    "trajectory", "simulate_batch", "lift", "interconnect",
    "composite_measurement", "augment_incremental", "autonomize_timevarying",
    "norm_measure", "block_measure", "trajectory_csv",
]


class DimensionMismatch(ValueError):
    pass


class HasInputs(ValueError):
    pass


def _as_blocks(blocks) -> tuple[np.ndarray, ...] | None:
    if blocks is None:
        return None
    out = []
    for b in blocks:
        if isinstance(b, slice):
            b = np.arange(b.start or 0, b.stop, b.step or 1)
        arr = np.asarray(b, dtype=int).ravel()
        arr.flags.writeable = False
        out.append(arr)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """``x(k+1) = update(x(k), u(k))`` with ``x`` in R^n and ``u`` in R^m.

    `blocks`, when given, lists the state indices of each subsystem and is
    used to evaluate block measurements and subsystem functions.
    """

    n: int
    m: int
    update: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "system"
    blocks: tuple | None = None
    vectorized: bool = True

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise ValueError("state dimension must be positive, input dimension nonnegative")
        blocks = _as_blocks(self.blocks)
        if blocks is not None:
            flat = np.sort(np.concatenate(blocks))
            if flat.size != self.n or np.any(flat != np.arange(self.n)):
                raise DimensionMismatch("blocks must partition the state indices")
        object.__setattr__(self, "blocks", blocks)

    def step(self, x, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise DimensionMismatch(f"state has dimension {x.shape[-1]}, expected {self.n}")
        if u is None:
            u = np.zeros(x.shape[:-1] + (self.m,))
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.m:
            raise DimensionMismatch(f"input has dimension {u.shape[-1]}, expected {self.m}")
        if self.vectorized or x.ndim == 1:
            out = np.asarray(self.update(x, u), dtype=float)
        else:
            xb = x.reshape(-1, self.n)
            ub = np.broadcast_to(u, x.shape[:-1] + (self.m,)).reshape(xb.shape[0], self.m)
            out = np.stack([np.asarray(self.update(a, b), dtype=float) for a, b in zip(xb, ub)])
            out = out.reshape(x.shape)
        return out

    @property
    def n_blocks(self) -> int:
        return 1 if self.blocks is None else len(self.blocks)

    def with_blocks(self, blocks) -> "DiscreteSystem":
        return DiscreteSystem(self.n, self.m, self.update, self.name, blocks, self.vectorized)


class SignalKind(enum.Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    SAMPLES = "samples"


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Input sequence u(0), u(1), ... with cached sup-norm.

    Sampled signals hold their last value beyond the provided samples, so
    the sup-norm is the largest Euclidean norm among the samples.
    """

    m: int
    kind: SignalKind = SignalKind.ZERO
    values: np.ndarray | None = None
    sup_norm: float = field(init=False)

    def __post_init__(self):
        if self.kind is SignalKind.ZERO:
            vals = np.zeros((1, self.m))
        else:
            vals = np.atleast_2d(np.asarray(self.values, dtype=float))
            if self.kind is SignalKind.CONSTANT:
                vals = vals.reshape(1, -1)
            if vals.shape[1] != self.m or vals.shape[0] == 0:
                raise DimensionMismatch(f"input samples must have shape (K, {self.m})")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        sup = float(np.max(np.linalg.norm(vals, axis=1))) if self.m else 0.0
        object.__setattr__(self, "sup_norm", sup)

    @classmethod
    def zero(cls, m: int) -> "InputSignal":
        return cls(m)

    @classmethod
    def constant(cls, value) -> "InputSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(value.size, SignalKind.CONSTANT, value)

    @classmethod
    def samples(cls, values) -> "InputSignal":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(values.shape[1], SignalKind.SAMPLES, values)

    def at(self, k: int) -> np.ndarray:
        return self.values[min(k, self.values.shape[0] - 1)]

    def window(self, start: int, length: int) -> np.ndarray:
        """``u(start), ..., u(start+length-1)`` as a ``(length, m)`` array."""
        idx = np.minimum(np.arange(start, start + length), self.values.shape[0] - 1)
        return self.values[idx]

    def shifted(self, j: int) -> "InputSignal":
        """The signal ``k -> u(k + j)``."""
        if self.kind is not SignalKind.SAMPLES:
            return self
        return InputSignal.samples(self.values[min(j, self.values.shape[0] - 1):])


def trajectory(sys: DiscreteSystem, xi, u: InputSignal | None = None, K: int = 0) -> np.ndarray:
    """States ``x(0), ..., x(K)`` as a ``(K+1, n)`` array."""
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size != sys.n:
        raise DimensionMismatch(f"initial state has dimension {xi.size}, expected {sys.n}")
    if u is None:
        u = InputSignal.zero(sys.m)
    if u.m != sys.m:
        raise DimensionMismatch(f"input has dimension {u.m}, expected {sys.m}")
    out = np.empty((K + 1, sys.n))
    out[0] = xi
    for k in range(K):
        out[k + 1] = sys.step(out[k], u.at(k))
    return out


def simulate_batch(sys: DiscreteSystem, xi: np.ndarray, u: np.ndarray | None, steps: int) -> np.ndarray:
    """Simulate a batch.

    Parameters
    ----------
    xi : (N, n) array
    u : (N, steps, m) array or None (zero input)

    Returns
    -------
    (steps+1, N, n) array of states.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != sys.n:
        raise DimensionMismatch(f"states have dimension {xi.shape[1]}, expected {sys.n}")
    N = xi.shape[0]
    if u is None:
        u = np.zeros((N, steps, sys.m))
    u = np.asarray(u, dtype=float)
    if u.shape[0] != N or u.shape[1] < steps or u.shape[2] != sys.m:
        raise DimensionMismatch(f"inputs must have shape ({N}, >={steps}, {sys.m})")
    out = np.empty((steps + 1, N, sys.n))
    out[0] = xi
    for k in range(steps):
        out[k + 1] = sys.step(out[k], u[:, k, :])
    return out


def lift(sys: DiscreteSystem, M: int) -> DiscreteSystem:
    """M-step system ``y+ = g^M(y, u_1, ..., u_M)`` with stacked input."""
    if M < 1:
        raise ValueError("M must be at least 1")
    m = sys.m

    def update(y, w):
        w = np.asarray(w, dtype=float)
        for j in range(M):
            y = sys.step(y, w[..., j * m:(j + 1) * m])
        return y

    return DiscreteSystem(sys.n, M * m, update, f"{sys.name}^{M}", sys.blocks, sys.vectorized)


@dataclass(frozen=True, eq=False)
class NetworkTopology:
    """Subsystems ``x_i+ = g_i(x_1, ..., x_l, u)``.

    Each ``g_i`` receives the full stacked state; blocks outside
    ``neighbors[i] + [i]`` are filled with NaN so that an update reading a
    non-neighbour is detected instead of silently using data it should not
    see.  ``neighbors=None`` means every block may be read.
    """

    block_dims: Sequence[int]
    updates: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]]
    m: int = 0
    neighbors: Sequence[Sequence[int]] | None = None
    name: str = "network"

    def __post_init__(self):
        if len(self.block_dims) != len(self.updates):
            raise DimensionMismatch("one update map per block is required")
        if self.neighbors is not None and len(self.neighbors) != len(self.block_dims):
            raise DimensionMismatch("one neighbour set per block is required")

    @property
    def n(self) -> int:
        return int(sum(self.block_dims))

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        edges = np.cumsum([0] + list(self.block_dims))
        return tuple(np.arange(a, b) for a, b in zip(edges[:-1], edges[1:]))


def interconnect(topology: NetworkTopology) -> DiscreteSystem:
    """Composite system of a network, states stacked in block order."""
    blocks = topology.blocks
    masks = []
    for i, _ in enumerate(blocks):
        if topology.neighbors is None:
            masks.append(None)
            continue
        visible = set(topology.neighbors[i]) | {i}
        hidden = [b for j, b in enumerate(blocks) if j not in visible]
        masks.append(np.concatenate(hidden) if hidden else None)

    def update(x, u):
        out = np.empty_like(x)
        for i, (g, idx) in enumerate(zip(topology.updates, blocks)):
            xi = x
            if masks[i] is not None:
                xi = x.copy()
                xi[..., masks[i]] = np.nan
            nxt = np.asarray(g(xi, u), dtype=float).reshape(x.shape[:-1] + (idx.size,))
            if masks[i] is not None and np.any(np.isnan(nxt) & ~np.isnan(x[..., idx])):
                raise ValueError(f"block {i} reads state outside its neighbour set")
            out[..., idx] = nxt
        return out

    return DiscreteSystem(topology.n, topology.m, update, topology.name, blocks)


class MeasurementTag(enum.Enum):
    NORM = "norm"
    SET_DISTANCE = "set_distance"
    BLOCK_NORM = "block_norm"
    COMPOSITE = "composite"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class MeasurementFunction:
    """Continuous, positive semidefinite ``omega: R^n -> [0, inf)``.

    `fn` must be vectorized over leading axes.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    tag: MeasurementTag = MeasurementTag.CUSTOM
    description: str = ""

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


def norm_measure(ord=2) -> MeasurementFunction:
    """``|x|`` in the given norm (2 = Euclidean, ``np.inf`` = max norm)."""
    return MeasurementFunction(lambda x: np.linalg.norm(x, ord=ord, axis=-1),
                               MeasurementTag.NORM, f"|x|_{ord}")


def block_measure(indices, ord=2) -> MeasurementFunction:
    """Norm of the sub-vector ``x[indices]``, e.g. the primary variable of a partial-ISS problem."""
    idx = np.asarray(indices, dtype=int)
    return MeasurementFunction(lambda x: np.linalg.norm(x[..., idx], ord=ord, axis=-1),
                               MeasurementTag.BLOCK_NORM, f"|x[{idx.tolist()}]|_{ord}")


def set_distance(projector: Callable[[np.ndarray], np.ndarray]) -> MeasurementFunction:
    """Euclidean distance to a closed set given its (vectorized) projection."""
    return MeasurementFunction(lambda x: np.linalg.norm(x - projector(x), axis=-1),
                               MeasurementTag.SET_DISTANCE, "dist(x, A)")


class NormKind(enum.Enum):
    MAX = "max"
    WEIGHTED_MAX = "weighted_max"
    WEIGHTED_SUM = "weighted_sum"


@dataclass(frozen=True, eq=False)
class MonotonicNorm:
    """Monotonic norm used to aggregate block measurements."""

    kind: NormKind = NormKind.MAX
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind is not NormKind.MAX:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.size == 0 or np.any(w <= 0):
                raise ValueError("weights must be positive")
            object.__setattr__(self, "weights", w)

    @classmethod
    def max_norm(cls) -> "MonotonicNorm":
        return cls()

    @classmethod
    def weighted_max(cls, weights) -> "MonotonicNorm":
        return cls(NormKind.WEIGHTED_MAX, weights)

    @classmethod
    def weighted_sum(cls, weights) -> "MonotonicNorm":
        return cls(NormKind.WEIGHTED_SUM, weights)

    def __call__(self, z):
        z = np.abs(np.asarray(z, dtype=float))
        if self.kind is NormKind.MAX:
            return np.max(z, axis=-1)
        if z.shape[-1] != self.weights.size:
            raise DimensionMismatch("weight vector does not match argument")
        if self.kind is NormKind.WEIGHTED_MAX:
            return np.max(z * self.weights, axis=-1)
        return np.sum(z * self.weights, axis=-1)

    def unit_values(self, l: int) -> np.ndarray:
        """``mu(e_i)`` for the standard basis of R^l."""
        return np.array([float(self(np.eye(l)[i])) for i in range(l)])

    def equivalence_constant(self, l: int) -> float:
        """Smallest ``c`` with ``mu(z) <= c |z|_inf``, i.e. ``mu(1, ..., 1)``."""
        return float(self(np.ones(l)))

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        return out


def composite_measurement(parts: Sequence[MeasurementFunction], mu: MonotonicNorm,
                          blocks) -> MeasurementFunction:
    """``omega(x) = mu(omega_1(x_1), ..., omega_l(x_l))``."""
    blocks = _as_blocks(blocks)
    if len(parts) != len(blocks):
        raise DimensionMismatch("one measurement per block is required")

    def fn(x):
        z = np.stack([p(x[..., b]) for p, b in zip(parts, blocks)], axis=-1)
        return mu(z)

    return MeasurementFunction(fn, MeasurementTag.COMPOSITE,
                               f"{mu.kind.value}({', '.join(p.description for p in parts)})")


def augment_incremental(sys: DiscreteSystem) -> tuple[DiscreteSystem, MeasurementFunction]:
    """Two copies of an autonomous system with ``omega(xi, zeta) = |xi - zeta|``."""
    if sys.m > 0:
        raise HasInputs("incremental augmentation needs an autonomous system")
    n = sys.n

    def update(z, u):
        return np.concatenate([sys.step(z[..., :n]), sys.step(z[..., n:])], axis=-1)

    blocks = None
    if sys.blocks is not None:
        blocks = [np.concatenate([b, b + n]) for b in sys.blocks]
    aug = DiscreteSystem(2 * n, 0, update, f"{sys.name}x2", blocks, sys.vectorized)
    omega = MeasurementFunction(lambda z: np.linalg.norm(z[..., :n] - z[..., n:], axis=-1),
                                MeasurementTag.SET_DISTANCE, "|xi - zeta|")
    return aug, omega


def autonomize_timevarying(tv_update: Callable, n: int, m: int) -> DiscreteSystem:
    """Time-invariant system on ``(x, z)`` where the clock ``z`` counts steps.

    `tv_update(k, x, u)` receives the clock value as a float array.  The
    clock is the last state coordinate; measurements should only read the
    first `n` coordinates.
    """

    def update(xz, u):
        x, z = xz[..., :n], xz[..., n]
        return np.concatenate([np.asarray(tv_update(z, x, u), dtype=float),
                               (z + 1.0)[..., None]], axis=-1)

    return DiscreteSystem(n + 1, m, update, "autonomized",
                          [np.arange(n), np.array([n])])


def trajectory_csv(states: np.ndarray, inputs: np.ndarray | None = None,
                   omega: np.ndarray | None = None, file=None) -> str:
    """Write a trajectory as CSV with columns ``k, x_1..x_n, u_1..u_m, omega``.

    `inputs` has one row per transition; the last state row repeats the
    final input so every row is complete.  Returns the CSV text and also
    writes it to `file` when given.
    """
    states = np.atleast_2d(states)
    K1, n = states.shape
    m = 0 if inputs is None else np.atleast_2d(inputs).shape[1]
    header = ["k"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(m)] + ["omega"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k in range(K1):
        row = [k] + [repr(float(a)) for a in states[k]]
        if m:
            u = np.atleast_2d(inputs)
            row += [repr(float(a)) for a in u[min(k, u.shape[0] - 1)]]
        row.append("" if omega is None else repr(float(omega[k])))
        w.writerow(row)
    text = buf.getvalue()
    if file is not None:
        if hasattr(file, "write"):
            file.write(text)
        else:
            with open(file, "w", newline="") as fh:
                fh.write(text)
    return text
