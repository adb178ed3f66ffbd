"""Piecewise-linear comparison functions.

Every gain, decay rate and sandwich bound handled by the package is a
:class:`PLFunction`: a continuous, piecewise-linear map of the nonnegative
half-line that is zero at zero and either identically zero or strictly
increasing.  Composition, inversion, pointwise max/min and addition are
computed exactly on the breakpoint representation, so chains of operations
(cycle gains, scalings, iterates) do not pick up sampling error beyond the
floating-point rounding of the breakpoint coordinates.

Closed-form gains are brought into this representation with
:func:`from_callable`, which by default returns a PL majorant of the
sampled function so that inequalities certified for the PL object also
hold for the original gain.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import optimize

__all__ = [
    "Kind", "PLFunction", "KLFunction", "IdentityCheck", "NotInvertible",
    "zero", "identity", "linear", "from_points", "from_callable",
    "dyadic_grid", "check_grid",
    "evaluate", "compose", "inverse", "pointwise_max", "pointwise_min",
    "pointwise_add", "scale", "iterate", "below_identity", "kl_bound",
]

# relative spacing under which two breakpoints are merged
_MERGE_RTOL = 1e-14
# relative slope difference under which a breakpoint is considered redundant
_COLLINEAR_RTOL = 1e-14


class NotInvertible(ValueError):
    """Raised when inverting a function that is not of class K-infinity."""


class Kind(enum.Enum):
    ZERO = "zero"
    K = "K"
    KINF = "Kinf"


@dataclass(frozen=True, eq=False, repr=False)
class PLFunction:
    """Piecewise-linear comparison function.

    Parameters
    ----------
    s, v : array_like
        Breakpoint coordinates.  ``s[0] == v[0] == 0`` and ``s`` strictly
        increasing.  Unless the function is identically zero, ``v`` must be
        strictly increasing as well.
    tail_slope : float
        Slope used beyond the last breakpoint.

    The kind is inferred: identically zero functions are :attr:`Kind.ZERO`,
    strictly increasing ones with a positive tail are :attr:`Kind.KINF`
    and the remaining (eventually constant) ones are :attr:`Kind.K`.
    Instances are immutable.
    """

    s: np.ndarray
    v: np.ndarray
    tail_slope: float = 0.0

    def __post_init__(self):
        s = np.array(self.s, dtype=float).ravel()
        v = np.array(self.v, dtype=float).ravel()
        tail = float(self.tail_slope)
        if s.shape != v.shape or s.size == 0:
            raise ValueError("breakpoint arrays must be nonempty and of equal length")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v)) and np.isfinite(tail)):
            raise ValueError("breakpoints and tail slope must be finite")
        if s[0] != 0.0 or v[0] != 0.0:
            raise ValueError("first breakpoint must be (0, 0)")
        if np.any(np.diff(s) <= 0):
            raise ValueError("breakpoint abscissae must be strictly increasing")
        if tail < 0:
            raise ValueError("tail slope must be nonnegative")
        if np.all(v == 0.0) and tail == 0.0:
            s, v = np.zeros(1), np.zeros(1)
            kind = Kind.ZERO
        else:
            if np.any(np.diff(v) <= 0):
                raise ValueError("comparison function must be strictly increasing")
            if s.size == 1 and tail == 0.0:
                raise ValueError("comparison function must be strictly increasing")
            kind = Kind.KINF if tail > 0 else Kind.K
        s.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "tail_slope", tail)
        object.__setattr__(self, "kind", kind)

    # -- basic protocol -------------------------------------------------
    def __call__(self, x):
        return evaluate(self, x)

    def __repr__(self):
        if self.kind is Kind.ZERO:
            return "PLFunction(zero)"
        return (f"PLFunction({self.kind.value}, {self.s.size} breakpoints, "
                f"tail_slope={self.tail_slope:g})")

    @property
    def is_zero(self) -> bool:
        return self.kind is Kind.ZERO

    @property
    def n_breakpoints(self) -> int:
        return int(self.s.size)

    def equals(self, other: "PLFunction", rtol: float = 1e-12) -> bool:
        """Compare two functions on the union of their breakpoints and tails."""
        pts = np.union1d(self.s, other.s)
        a, b = self(pts), other(pts)
        scale_ = np.maximum(np.abs(a), np.abs(b))
        ok = np.all(np.abs(a - b) <= rtol * scale_ + 1e-300)
        tail_ok = abs(self.tail_slope - other.tail_slope) <= rtol * max(
            abs(self.tail_slope), abs(other.tail_slope), 1e-300)
        return bool(ok and tail_ok)

    # operator sugar; f @ g is composition f(g(.))
    def __matmul__(self, other: "PLFunction") -> "PLFunction":
        return compose(self, other)

    def __add__(self, other: "PLFunction") -> "PLFunction":
        return pointwise_add(self, other)

    def __mul__(self, c: float) -> "PLFunction":
        return scale(self, c)

    __rmul__ = __mul__

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "breakpoints": [[float(a), float(b)] for a, b in zip(self.s, self.v)],
            "tail_slope": self.tail_slope,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PLFunction":
        pts = np.asarray(data["breakpoints"], dtype=float).reshape(-1, 2)
        f = cls(pts[:, 0], pts[:, 1], data.get("tail_slope", 0.0))
        declared = data.get("kind")
        if declared is not None and Kind(declared) is not f.kind:
            raise ValueError(f"declared kind {declared!r} does not match data ({f.kind.value})")
        return f


# -- constructors ----------------------------------------------------------

_ZERO = PLFunction([0.0], [0.0], 0.0)


def zero() -> PLFunction:
    return _ZERO


def linear(c: float) -> PLFunction:
    """The function ``s -> c*s`` (zero if ``c == 0``)."""
    if c < 0:
        raise ValueError("slope must be nonnegative")
    if c == 0:
        return _ZERO
    return PLFunction([0.0], [0.0], c)


def identity() -> PLFunction:
    return linear(1.0)


def from_points(s, v, tail_slope: float | None = None) -> PLFunction:
    """Build a PL function through ``(s, v)``, prepending the origin if absent.

    When `tail_slope` is omitted the last segment is extended.
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    if s.size == 0 or s[0] != 0.0:
        s = np.concatenate(([0.0], s))
        v = np.concatenate(([0.0], v))
    if tail_slope is None:
        tail_slope = (v[-1] - v[-2]) / (s[-1] - s[-2]) if s.size > 1 else 0.0
    return _build(s, v, tail_slope)


def dyadic_grid(step: float = 1 / 64, s_hi: float = 16.0, depth: int = 20) -> np.ndarray:
    """Sampling grid used for closed-form gains.

    Uniform with spacing `step` on ``[0, 1]``, refined dyadically towards
    zero down to ``2**-depth`` and continued geometrically (quarter
    octaves) up to `s_hi`.
    """
    k0 = int(round(-np.log2(step)))
    fine = 2.0 ** -np.arange(depth, k0, -1, dtype=float)
    uniform = np.arange(1, int(round(1 / step)) + 1) * step
    octaves = int(np.ceil(4 * np.log2(max(s_hi, 1.0))))
    coarse = 2.0 ** (np.arange(1, octaves + 1) / 4.0)
    return np.unique(np.concatenate(([0.0], fine, uniform, coarse)))


def check_grid(s_max: float = 10.0, n: int = 512) -> np.ndarray:
    """Geometric grid of `n` points on ``(0, s_max]`` (smallest ``s_max*2**-20``)."""
    return np.geomspace(s_max * 2.0 ** -20, s_max, n)


def from_callable(fn: Callable, grid: np.ndarray | None = None, *,
                  mode: str = "upper", tail_slope: float | None = None,
                  refine: int = 64) -> PLFunction:
    """Sample a closed-form comparison function onto a PL representation.

    Parameters
    ----------
    fn : callable
        Vectorized, strictly increasing, ``fn(0) == 0``.
    grid : array_like, optional
        Abscissae including 0; defaults to :func:`dyadic_grid`.
    mode : {"upper", "interp"}
        ``"interp"`` interpolates the samples.  ``"upper"`` (default) lifts
        each interior breakpoint by the largest excess of `fn` over the chord
        on the adjacent segments, giving a majorant of `fn` everywhere except
        on the first segment, where no lift is possible without raising the
        slope at zero.  The dyadic refinement towards zero keeps that
        residual below ``2**-42`` for Lipschitz gains with unit slope.
    tail_slope : float, optional
        Slope beyond the last grid point (default: slope of last segment).
    refine : int
        Subsamples per segment used to locate the chord excess.
    """
    grid = dyadic_grid() if grid is None else np.unique(np.asarray(grid, dtype=float))
    if grid[0] != 0.0:
        grid = np.concatenate(([0.0], grid))
    vals = np.asarray(fn(grid), dtype=float)
    vals[0] = 0.0
    if mode == "interp":
        return from_points(grid, vals, tail_slope)
    if mode != "upper":
        raise ValueError(f"unknown sampling mode {mode!r}")

    lo, hi = grid[:-1], grid[1:]
    t = np.linspace(0.0, 1.0, refine + 1)
    pts = lo[:, None] + (hi - lo)[:, None] * t[None, :]
    chord = vals[:-1, None] + (vals[1:] - vals[:-1])[:, None] * t[None, :]
    excess = np.asarray(fn(pts.ravel()), dtype=float).reshape(pts.shape) - chord
    best = np.argmax(excess, axis=1)
    seg_excess = np.maximum(excess[np.arange(lo.size), best], 0.0)
    for i in np.nonzero(seg_excess > 0)[0]:
        j = best[i]
        a = pts[i, max(j - 1, 0)]
        b = pts[i, min(j + 1, refine)]
        slope = (vals[i + 1] - vals[i]) / (hi[i] - lo[i])
        res = optimize.minimize_scalar(
            lambda x: -(float(fn(np.array([x]))[0]) - (vals[i] + slope * (x - lo[i]))),
            bounds=(a, b), method="bounded", options={"xatol": 1e-14 * max(b, 1e-300)})
        seg_excess[i] = max(seg_excess[i], -res.fun)
    lift = np.zeros_like(vals)
    lift[1:-1] = np.maximum(seg_excess[:-1], seg_excess[1:])
    lift[-1] = seg_excess[-1]
    upper = vals + lift
    upper[0] = 0.0
    upper = np.maximum.accumulate(upper)
    for i in range(1, upper.size):
        if upper[i] <= upper[i - 1]:
            upper[i] = np.nextafter(upper[i - 1], np.inf)
    if tail_slope is None:
        tail_slope = (upper[-1] - upper[-2]) / (grid[-1] - grid[-2])
    return _build(grid, upper, tail_slope)


# -- internal helpers ------------------------------------------------------

def _simplify(s: np.ndarray, v: np.ndarray, tail: float):
    """Merge near-duplicate abscissae and drop collinear breakpoints."""
    keep_s, keep_v = [s[0]], [v[0]]
    for a, b in zip(s[1:], v[1:]):
        if a - keep_s[-1] <= _MERGE_RTOL * max(abs(a), 1e-300):
            keep_v[-1] = max(keep_v[-1], b) if len(keep_s) > 1 else keep_v[-1]
            continue
        keep_s.append(a)
        keep_v.append(b)
    s = np.array(keep_s)
    v = np.array(keep_v)
    out_s, out_v = [s[0]], [v[0]]
    for i in range(1, s.size):
        left = (v[i] - out_v[-1]) / (s[i] - out_s[-1])
        right = (v[i + 1] - v[i]) / (s[i + 1] - s[i]) if i + 1 < s.size else tail
        if abs(left - right) <= _COLLINEAR_RTOL * max(abs(left), abs(right)):
            continue
        out_s.append(s[i])
        out_v.append(v[i])
    return np.array(out_s), np.array(out_v)


def _build(s, v, tail) -> PLFunction:
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    v = np.where(np.abs(v) < 1e-300, 0.0, v)
    s, v = _simplify(s, v, float(tail))
    return PLFunction(s, v, tail)


def _preimage(g: PLFunction, y: np.ndarray) -> np.ndarray:
    """Preimages under strictly increasing `g` of the values `y` in its range."""
    y = np.asarray(y, dtype=float)
    inside = y <= g.v[-1]
    out = [np.interp(y[inside], g.v, g.s)]
    if g.tail_slope > 0:
        beyond = y[~inside]
        out.append(g.s[-1] + (beyond - g.v[-1]) / g.tail_slope)
    return np.concatenate(out)


# -- operations ------------------------------------------------------------

def evaluate(f: PLFunction, x):
    """Evaluate `f` at nonnegative `x` (scalar or array)."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise ValueError("comparison functions are defined on [0, inf)")
    if f.kind is Kind.ZERO:
        out = np.zeros_like(x_arr)
    else:
        out = np.interp(x_arr, f.s, f.v)
        beyond = x_arr > f.s[-1]
        if np.any(beyond):
            out = np.where(beyond, f.v[-1] + f.tail_slope * (x_arr - f.s[-1]), out)
    if np.ndim(x) == 0:
        return float(out)
    return out


def compose(f: PLFunction, g: PLFunction) -> PLFunction:
    """Exact composition ``f o g``."""
    if f.is_zero or g.is_zero:
        return _ZERO
    pre = _preimage(g, f.s[1:])
    s = np.union1d(g.s, pre[pre >= 0])
    v = evaluate(f, evaluate(g, s))
    return _build(s, v, f.tail_slope * g.tail_slope)


def inverse(f: PLFunction) -> PLFunction:
    """Exact inverse of a K-infinity function."""
    if f.kind is not Kind.KINF:
        raise NotInvertible(f"cannot invert a function of kind {f.kind.value}")
    return PLFunction(f.v.copy(), f.s.copy(), 1.0 / f.tail_slope)


def _extreme(f: PLFunction, g: PLFunction, take_max: bool) -> PLFunction:
    s = np.union1d(f.s, g.s)
    d = evaluate(f, s) - evaluate(g, s)
    cross = []
    flip = d[:-1] * d[1:] < 0
    if np.any(flip):
        i = np.nonzero(flip)[0]
        cross.append(s[i] + (s[i + 1] - s[i]) * d[i] / (d[i] - d[i + 1]))
    dslope = f.tail_slope - g.tail_slope
    if d[-1] * dslope < 0:
        cross.append(np.array([s[-1] - d[-1] / dslope]))
    if cross:
        s = np.union1d(s, np.concatenate(cross))
    fv, gv = evaluate(f, s), evaluate(g, s)
    v = np.maximum(fv, gv) if take_max else np.minimum(fv, gv)
    far = (fv[-1] - gv[-1]) + dslope
    f_wins = far >= 0 if take_max else far <= 0
    tail = f.tail_slope if f_wins else g.tail_slope
    return _build(s, v, tail)


def pointwise_max(f: PLFunction, g: PLFunction, *more: PLFunction) -> PLFunction:
    out = _extreme(f, g, True)
    for h in more:
        out = _extreme(out, h, True)
    return out


def pointwise_min(f: PLFunction, g: PLFunction, *more: PLFunction) -> PLFunction:
    out = _extreme(f, g, False)
    for h in more:
        out = _extreme(out, h, False)
    return out


def max_of(functions: Iterable[PLFunction]) -> PLFunction:
    """Pointwise max of an iterable (zero for an empty one)."""
    out = _ZERO
    for h in functions:
        out = _extreme(out, h, True)
    return out


def pointwise_add(f: PLFunction, g: PLFunction) -> PLFunction:
    s = np.union1d(f.s, g.s)
    return _build(s, evaluate(f, s) + evaluate(g, s), f.tail_slope + g.tail_slope)


def difference(f: PLFunction, g: PLFunction) -> tuple[np.ndarray, np.ndarray, float]:
    """Raw breakpoints ``(s, f(s) - g(s), tail)`` of ``f - g``.

    The difference is generally not a comparison function; callers decide
    how to repair or reject it.
    """
    s = np.union1d(f.s, g.s)
    return s, evaluate(f, s) - evaluate(g, s), f.tail_slope - g.tail_slope


def scale(f: PLFunction, c: float) -> PLFunction:
    """Pointwise ``c * f`` for ``c > 0``."""
    if c <= 0:
        raise ValueError("scale factor must be positive")
    if f.is_zero:
        return _ZERO
    return PLFunction(f.s.copy(), f.v * c, f.tail_slope * c)


def iterate(f: PLFunction, k: int) -> PLFunction:
    """``f`` composed with itself `k` times (``k >= 1``)."""
    if k < 1:
        raise ValueError("iteration count must be positive")
    out = f
    for _ in range(k - 1):
        out = compose(f, out)
    return out


@dataclass(frozen=True)
class IdentityCheck:
    verdict: bool
    worst_margin: float
    worst_s: float

    def __bool__(self):
        return self.verdict


def below_identity(f: PLFunction, s_max: float = 10.0, grid: int = 512,
                   tol: float = 1e-9) -> IdentityCheck:
    """Check ``f(s) <= (1 - tol) s`` on ``(0, s_max]``.

    The relative margin ``(s - f(s)) / s`` is evaluated on a geometric grid
    of `grid` points, on every breakpoint of `f` inside ``(0, s_max]`` and in
    the limit ``s -> inf`` (``1 - tail_slope``).  For a PL function the
    margin is monotone on each linear piece, so breakpoints plus the
    asymptote cover the whole of ``(0, s_max]`` exactly.
    """
    if f.is_zero:
        return IdentityCheck(True, 1.0, float("nan"))
    pts = np.union1d(check_grid(s_max, grid), f.s[(f.s > 0) & (f.s <= s_max)])
    margins = (pts - evaluate(f, pts)) / pts
    i = int(np.argmin(margins))
    worst, worst_s = float(margins[i]), float(pts[i])
    tail_margin = 1.0 - f.tail_slope
    if tail_margin < worst:
        worst, worst_s = tail_margin, float("inf")
    return IdentityCheck(worst >= tol, worst, worst_s)


@dataclass(frozen=True)
class KLFunction:
    """``beta(s, k) = lower^-1(contraction^k(upper(s)))``."""

    contraction: PLFunction
    lower: PLFunction
    upper: PLFunction

    def __post_init__(self):
        if self.lower.kind is not Kind.KINF:
            raise ValueError("lower bound must be of class K-infinity")

    def __call__(self, s, k: int):
        return kl_bound(self, s, k)

    def sequence(self, s, K: int) -> np.ndarray:
        """``beta(s, k)`` for ``k = 0..K``, stacked along the first axis."""
        low_inv = inverse(self.lower)
        x = np.asarray(evaluate(self.upper, s), dtype=float)
        out = np.empty((K + 1,) + x.shape)
        for k in range(K + 1):
            out[k] = evaluate(low_inv, x)
            x = evaluate(self.contraction, x)
        return out


def kl_bound(klf: KLFunction, s, k: int):
    if k < 0:
        raise ValueError("k must be nonnegative")
    x = evaluate(klf.upper, s)
    for _ in range(k):
        x = evaluate(klf.contraction, x)
    return evaluate(inverse(klf.lower), x)
