"""Sampled falsification of Lyapunov-type inequalities and form conversions.

Every checker draws states (and input windows) from a :class:`SampleSpace`,
simulates the system and tests one inequality at each sample.  A pass is
evidence on the sampled region, not a proof; a failure always carries a
witness that has been re-evaluated on its own before being reported.

The conversions :func:`implication_to_max` and :func:`max_to_dissipative`
turn one certificate form into another with explicit PL rates, so their
output can be re-checked with the same machinery.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from . import kfun
from .dtsim import DiscreteSystem, MeasurementFunction, simulate_batch
from .kfun import KLFunction, Kind, PLFunction
from .report import CheckReport

__all__ = [
    "ATOL", "RTOL", "MaxForm", "ImplicationForm", "DissipativeForm", "Certificate",
    "KBound", "Strategy", "SampleSpace", "CheckReport",
    "FormMismatch", "RateTooLarge", "ConstructionFailed", "FitFailed",
    "check_sandwich", "check_max_form", "check_implication_form",
    "check_dissipative_form", "check_iss_estimate", "check_k_bound",
    "check_growth_bound", "implication_to_max", "max_to_dissipative",
    "estimate_k_bound", "propagate_k_bound", "iss_estimate",
]

ATOL = 1e-9
RTOL = 1e-9


class FormMismatch(TypeError):
    pass


class RateTooLarge(ValueError):
    pass


class ConstructionFailed(RuntimeError):
    pass


class FitFailed(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


# -- certificates ----------------------------------------------------------

@dataclass(frozen=True)
class MaxForm:
    """``V(x(M)) <= max{alpha(V(xi)), gamma(|u|)}``."""
    alpha: PLFunction
    gamma: PLFunction
    name = "max"


@dataclass(frozen=True)
class ImplicationForm:
    """``V(xi) >= gamma(|u|)  =>  V(x(M)) - V(xi) <= -alpha(V(xi))``."""
    alpha: PLFunction
    gamma: PLFunction
    name = "implication"


@dataclass(frozen=True)
class DissipativeForm:
    """``V(x(M)) - V(xi) <= -alpha(V(xi)) + gamma(|u|)``."""
    alpha: PLFunction
    gamma: PLFunction
    name = "dissipative"


Form = Union[MaxForm, ImplicationForm, DissipativeForm]
_FORMS = {"max": MaxForm, "implication": ImplicationForm, "dissipative": DissipativeForm}


@dataclass(frozen=True, eq=False)
class Certificate:
    """Candidate finite-step Lyapunov function with its rates.

    Parameters
    ----------
    V : callable
        Vectorized map from states ``(..., n)`` to ``[0, inf)``.
    form : MaxForm, ImplicationForm or DissipativeForm
    lower, upper : PLFunction
        Sandwich bounds ``lower(omega(x)) <= V(x) <= upper(omega(x))``.
    M : int
        Horizon of the decrease condition.
    omega : MeasurementFunction
    provenance : dict
        Free-form notes on how the certificate was obtained.
    """

    V: Callable
    form: Form
    lower: PLFunction
    upper: PLFunction
    M: int = 1
    omega: MeasurementFunction | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("horizon M must be positive")
        if self.lower.kind is not Kind.KINF or self.upper.kind is not Kind.KINF:
            raise ValueError("sandwich bounds must be of class K-infinity")

    def value(self, x) -> np.ndarray:
        return np.asarray(self.V(np.asarray(x, dtype=float)), dtype=float)

    def to_dict(self) -> dict:
        return {
            "form": self.form.name,
            "alpha": self.form.alpha.to_dict(),
            "gamma": self.form.gamma.to_dict(),
            "lower": self.lower.to_dict(),
            "upper": self.upper.to_dict(),
            "M": self.M,
            "omega": None if self.omega is None else self.omega.description,
            "provenance": self.provenance,
        }


def make_form(name: str, alpha: PLFunction, gamma: PLFunction) -> Form:
    return _FORMS[name](alpha, gamma)


@dataclass(frozen=True)
class KBound:
    """``omega(g(xi, mu)) <= kappa1(omega(xi)) + kappa2(|mu|)``."""

    kappa1: PLFunction
    kappa2: PLFunction
    provenance: str = "supplied"

    def to_dict(self) -> dict:
        return {"kappa1": self.kappa1.to_dict(), "kappa2": self.kappa2.to_dict(),
                "provenance": self.provenance}


# -- sampling --------------------------------------------------------------

class Strategy(enum.Enum):
    GRID = "grid"
    UNIFORM = "uniform"
    MIXED = "mixed"


def default_workers() -> int:
    env = os.environ.get("SGK_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SampleSpace:
    """Box of states and inputs to sample from.

    Bounds may be scalars (applied to every coordinate) or arrays.  With
    the grid strategy, inputs are held constant over each sampled window
    and the grid spans states and inputs jointly; random samples draw a
    fresh input at every step, and a fraction `zero_input_fraction` of
    them use the zero input.  ``MIXED`` uses a grid for half of the
    samples and random draws for the rest.

    Batches are generated from independent streams spawned from `seed`, so
    results do not depend on `workers`.
    """

    state_lo: object = -2.0
    state_hi: object = 2.0
    input_lo: object = -1.0
    input_hi: object = 1.0
    n_samples: int = 10_000
    seed: int = 0
    strategy: Strategy = Strategy.MIXED
    zero_input_fraction: float = 0.1
    batch_size: int = 4096
    workers: int | None = None

    def bounds(self, n: int, m: int):
        def fit(v, d):
            a = np.asarray(v, dtype=float).ravel()
            return np.broadcast_to(a, (d,)).copy() if a.size in (1, d) else _bad(d)

        def _bad(d):
            raise ValueError(f"bounds must be scalars or length-{d} arrays")

        return fit(self.state_lo, n), fit(self.state_hi, n), fit(self.input_lo, m), fit(self.input_hi, m)

    def with_seed(self, seed: int) -> "SampleSpace":
        return replace(self, seed=seed)

    def describe(self, n: int, m: int, steps: int) -> dict:
        slo, shi, ilo, ihi = self.bounds(n, m)
        return {"state_box": [slo.tolist(), shi.tolist()], "input_box": [ilo.tolist(), ihi.tolist()],
                "n_samples": self.n_samples, "seed": self.seed, "strategy": self.strategy.value,
                "steps": steps}

    def _grid(self, n: int, m: int, count: int) -> np.ndarray:
        slo, shi, ilo, ihi = self.bounds(n, m)
        lo, hi = np.concatenate([slo, ilo]), np.concatenate([shi, ihi])
        d = lo.size
        if count <= 0 or d == 0:
            return np.empty((0, d))
        k = max(2, int(np.floor(count ** (1.0 / d))))
        axes = []
        for a, b in zip(lo, hi):
            ax = np.linspace(a, b, k)
            if a < 0 < b:
                ax = np.union1d(ax, [0.0])
            axes.append(ax)
        while np.prod([len(a) for a in axes]) > count and k > 2:
            k -= 1
            axes = [np.union1d(np.linspace(a, b, k), [0.0]) if a < 0 < b else np.linspace(a, b, k)
                    for a, b in zip(lo, hi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        return mesh[:count]

    def batches(self, n: int, m: int, steps: int):
        """List of ``(xi, u)`` batches; ``xi`` is ``(B, n)``, ``u`` is ``(B, steps, m)``."""
        N = int(self.n_samples)
        n_grid = {Strategy.GRID: N, Strategy.UNIFORM: 0, Strategy.MIXED: N // 2}[self.strategy]
        grid = self._grid(n, m, n_grid)
        slo, shi, ilo, ihi = self.bounds(n, m)
        n_batches = max(1, -(-N // self.batch_size))
        seeds = np.random.SeedSequence(self.seed).spawn(n_batches)
        out = []
        for b in range(n_batches):
            lo_i, hi_i = b * self.batch_size, min(N, (b + 1) * self.batch_size)
            B = hi_i - lo_i
            rng = np.random.default_rng(seeds[b])
            xi = rng.uniform(slo, shi, size=(B, n))
            u = rng.uniform(ilo, ihi, size=(B, steps, m))
            zero = rng.random(B) < self.zero_input_fraction
            u[zero] = 0.0
            idx = np.arange(lo_i, hi_i)
            on_grid = idx < grid.shape[0]
            if np.any(on_grid):
                g = grid[idx[on_grid]]
                xi[on_grid] = g[:, :n]
                u[on_grid] = g[:, None, n:]
            out.append((xi, u))
        return out


def _input_norm(u: np.ndarray) -> np.ndarray:
    """Sup over the window of the Euclidean norm of ``u(k)``."""
    if u.shape[-1] == 0 or u.shape[-2] == 0:
        return np.zeros(u.shape[:-2])
    return np.max(np.linalg.norm(u, axis=-1), axis=-1)


def _violates(lhs, rhs, scale):
    return lhs > rhs + ATOL + RTOL * scale


def _run(space: SampleSpace, n: int, m: int, steps: int, evaluate, extra: dict | None = None,
         keep: int = 8) -> CheckReport:
    """Evaluate ``lhs <= rhs`` over all sample batches.

    `evaluate(xi, u)` returns a dict with arrays ``lhs``, ``rhs``, ``scale``,
    optional boolean ``active`` and optional per-sample ``info`` arrays.
    """

    def one(batch):
        xi, u = batch
        r = evaluate(xi, u)
        active = r.get("active", np.ones(xi.shape[0], dtype=bool))
        lhs, rhs, scale = r["lhs"], r["rhs"], r["scale"]
        margin = np.where(active, rhs - lhs, np.inf)
        bad = active & _violates(lhs, rhs, scale)
        order = np.argsort(margin)
        cands = [int(i) for i in order[:keep] if bad[i]]
        return {
            "count": int(np.sum(active)),
            "worst": float(np.min(margin)) if margin.size else np.inf,
            "violations": int(np.sum(bad)),
            "cands": [(float(margin[i]), xi[i], u[i]) for i in cands],
        }

    batches = space.batches(n, m, steps)
    workers = space.workers or default_workers()
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, batches))
    else:
        results = [one(b) for b in batches]

    count = sum(r["count"] for r in results)
    worst = min((r["worst"] for r in results), default=np.inf)
    cands = sorted((c for r in results for c in r["cands"]), key=lambda c: c[0])
    details = dict(space.describe(n, m, steps))
    details["active_samples"] = count
    details.update(extra or {})

    witness = None
    for _, xi, u in cands:
        r = evaluate(xi[None], u[None])
        active = r.get("active", np.ones(1, dtype=bool))
        if active[0] and _violates(r["lhs"], r["rhs"], r["scale"])[0]:
            witness = {"xi": xi.tolist(), "u": u.tolist(), "lhs": float(r["lhs"][0]),
                       "rhs": float(r["rhs"][0]), "reverified": True}
            for key, val in r.get("info", {}).items():
                witness[key] = np.asarray(val)[0].tolist()
            break
    details["violations"] = sum(r["violations"] for r in results)
    if worst == np.inf:
        worst = float("inf")
    return CheckReport(witness is None, count, worst, witness, details)


def _final_state(sys: DiscreteSystem, xi, u, M: int):
    return simulate_batch(sys, xi, u, M)[-1]


def _require(cert: Certificate, kind):
    if not isinstance(cert.form, kind):
        raise FormMismatch(f"expected a {kind.name}-form certificate, got {cert.form.name}")


# -- checkers --------------------------------------------------------------

def check_sandwich(cert: Certificate, sys: DiscreteSystem, space: SampleSpace) -> CheckReport:
    """``lower(omega(xi)) <= V(xi) <= upper(omega(xi))`` on sampled states."""

    def ev(xi, u):
        w = cert.omega(xi)
        v = cert.value(xi)
        lo = kfun.evaluate(cert.lower, w)
        hi = kfun.evaluate(cert.upper, w)
        # encode both bounds as one inequality: the smaller slack decides
        slack = np.minimum(v - lo, hi - v)
        scale = np.maximum.reduce([np.abs(v), lo, hi])
        return {"lhs": -slack, "rhs": np.zeros_like(slack), "scale": scale,
                "info": {"omega": w, "V": v}}

    return _run(space, sys.n, 0, 0, ev, {"check": "sandwich"})


def check_max_form(cert: Certificate, sys: DiscreteSystem, space: SampleSpace) -> CheckReport:
    """``V(x(M)) <= max{alpha(V(xi)), gamma(|u|)}``."""
    _require(cert, MaxForm)
    a, g = cert.form.alpha, cert.form.gamma

    def ev(xi, u):
        v0 = cert.value(xi)
        vM = cert.value(_final_state(sys, xi, u, cert.M))
        rhs = np.maximum(kfun.evaluate(a, v0), kfun.evaluate(g, _input_norm(u)))
        return {"lhs": vM, "rhs": rhs, "scale": np.maximum(np.abs(vM), rhs)}

    return _run(space, sys.n, sys.m, cert.M, ev, {"check": "max_form", "M": cert.M})


def check_implication_form(cert: Certificate, sys: DiscreteSystem, space: SampleSpace) -> CheckReport:
    """``V(xi) >= gamma(|u|)  =>  V(x(M)) <= V(xi) - alpha(V(xi))``."""
    _require(cert, ImplicationForm)
    a, g = cert.form.alpha, cert.form.gamma

    def ev(xi, u):
        v0 = cert.value(xi)
        active = v0 >= kfun.evaluate(g, _input_norm(u))
        vM = cert.value(_final_state(sys, xi, u, cert.M))
        rhs = v0 - kfun.evaluate(a, v0)
        return {"lhs": vM, "rhs": rhs, "scale": np.maximum(np.abs(vM), v0), "active": active}

    return _run(space, sys.n, sys.m, cert.M, ev, {"check": "implication_form", "M": cert.M})


def check_dissipative_form(cert: Certificate, sys: DiscreteSystem, space: SampleSpace) -> CheckReport:
    """``V(x(M)) <= V(xi) - alpha(V(xi)) + gamma(|u|)``."""
    _require(cert, DissipativeForm)
    a, g = cert.form.alpha, cert.form.gamma

    def ev(xi, u):
        v0 = cert.value(xi)
        vM = cert.value(_final_state(sys, xi, u, cert.M))
        gu = kfun.evaluate(g, _input_norm(u))
        rhs = v0 - kfun.evaluate(a, v0) + gu
        return {"lhs": vM, "rhs": rhs, "scale": np.maximum.reduce([np.abs(vM), v0, gu])}

    return _run(space, sys.n, sys.m, cert.M, ev, {"check": "dissipative_form", "M": cert.M})


def check_iss_estimate(sys: DiscreteSystem, omega: MeasurementFunction, beta: KLFunction,
                       gamma: PLFunction, space: SampleSpace, K: int) -> CheckReport:
    """``omega(x(k)) <= max{beta(omega(xi), k), gamma(|u|)}`` for ``k = 0..K``.

    ``|u|`` is the sup-norm of the sampled input window of length `K`.
    """

    def ev(xi, u):
        traj = simulate_batch(sys, xi, u, K)
        w = omega(traj)                                   # (K+1, B)
        b = beta.sequence(w[0], K)                        # (K+1, B)
        rhs = np.maximum(b, kfun.evaluate(gamma, _input_norm(u))[None, :])
        excess = w - rhs
        k = np.argmax(excess, axis=0)
        cols = np.arange(w.shape[1])
        lhs, r = w[k, cols], rhs[k, cols]
        return {"lhs": lhs, "rhs": r, "scale": np.maximum(lhs, r), "info": {"k": k}}

    return _run(space, sys.n, sys.m, K, ev, {"check": "iss_estimate", "K": K})


def check_k_bound(kb: KBound, sys: DiscreteSystem, omega: MeasurementFunction,
                  space: SampleSpace) -> CheckReport:
    """``omega(g(xi, mu)) <= kappa1(omega(xi)) + kappa2(|mu|)``."""

    def ev(xi, u):
        nxt = sys.step(xi, u[:, 0, :])
        lhs = omega(nxt)
        rhs = kfun.evaluate(kb.kappa1, omega(xi)) + kfun.evaluate(kb.kappa2, _input_norm(u))
        return {"lhs": lhs, "rhs": rhs, "scale": np.maximum(lhs, rhs)}

    return _run(space, sys.n, sys.m, 1, ev, {"check": "k_bound"})


def check_growth_bound(sys: DiscreteSystem, omega: MeasurementFunction, kb: KBound,
                       space: SampleSpace, J: int) -> CheckReport:
    """``omega(x(j)) <= theta_j(omega(xi)) + zeta_j(|u|)`` for ``j = 1..J``.

    The bounds come from :func:`propagate_k_bound`; ``|u|`` is the sup over
    the first ``j`` inputs.
    """
    pairs = [propagate_k_bound(kb, j) for j in range(1, J + 1)]

    def ev(xi, u):
        traj = simulate_batch(sys, xi, u, J)
        w = omega(traj)
        w0 = w[0]
        excess = np.full((J, xi.shape[0]), -np.inf)
        lhs_all = w[1:]
        rhs_all = np.empty_like(lhs_all)
        for j, (th, ze) in enumerate(pairs, start=1):
            rhs_all[j - 1] = kfun.evaluate(th, w0) + kfun.evaluate(ze, _input_norm(u[:, :j, :]))
        excess = lhs_all - rhs_all
        k = np.argmax(excess, axis=0)
        cols = np.arange(xi.shape[0])
        lhs, rhs = lhs_all[k, cols], rhs_all[k, cols]
        return {"lhs": lhs, "rhs": rhs, "scale": np.maximum(lhs, rhs), "info": {"j": k + 1}}

    return _run(space, sys.n, sys.m, J, ev, {"check": "growth_bound", "J": J})


# -- K-boundedness ---------------------------------------------------------

def propagate_k_bound(kb: KBound, j: int) -> tuple[PLFunction, PLFunction]:
    """Growth bounds ``(theta_j, zeta_j)`` after `j` steps.

    ``theta_1 = kappa1``, ``zeta_1 = kappa2`` and
    ``theta_(j+1) = kappa1 o (2 theta_j)``,
    ``zeta_(j+1) = kappa1 o (2 zeta_j) + kappa2``.
    """
    if j < 1:
        raise ValueError("j must be positive")
    theta, zeta = kb.kappa1, kb.kappa2
    for _ in range(j - 1):
        theta = kfun.compose(kb.kappa1, kfun.scale(theta, 2.0)) if not theta.is_zero else theta
        z2 = kfun.compose(kb.kappa1, kfun.scale(zeta, 2.0)) if not zeta.is_zero else zeta
        zeta = kfun.pointwise_add(z2, kb.kappa2)
    return theta, zeta


def _envelope(s: np.ndarray, y: np.ndarray, floor: float = 1e-6) -> PLFunction:
    """Increasing PL majorant of the points ``(s, y)`` with ``s > 0``.

    With ``c_k`` the running max of `y` over the sorted abscissae, the
    value at ``s_k`` is ``c_(k+1)``: a nondecreasing function that reaches
    ``c_(k+1)`` at ``s_(k+1)`` can exceed ``c_k`` on ``(s_k, s_(k+1))`` but not
    ``c_(k+1)``.  A slope floor makes the result strictly increasing and the
    tail continues along the steeper of the last chord and the ray through
    the last point.
    """
    keep = s > 0
    s, y = s[keep], np.maximum(y[keep], 0.0)
    if s.size == 0:
        return kfun.linear(floor)
    us, inv = np.unique(s, return_inverse=True)
    uy = np.zeros(us.size)
    np.maximum.at(uy, inv, y)
    c = np.maximum.accumulate(uy)
    c = np.concatenate([c[1:], c[-1:]])
    v = c + floor * us
    tail = v[-1] / us[-1]
    if us.size > 1:
        tail = max(tail, (v[-1] - v[-2]) / (us[-1] - us[-2]))
    return kfun.from_points(us, v, tail)


def estimate_k_bound(sys: DiscreteSystem, omega: MeasurementFunction, space: SampleSpace,
                     inflation: float = 1.05, slice_states: int = 64) -> KBound:
    """Fit ``kappa1, kappa2`` from samples and re-verify them.

    ``kappa1`` is the upper envelope of ``omega(g(xi, 0))`` against
    ``omega(xi)``.  ``kappa2`` is the upper envelope, against ``|mu|``, of
    ``omega(g(xi, mu))`` over states in the zero set of `omega` (the origin
    and any sampled state with zero measurement, up to `slice_states` of
    them, each paired with every sampled input) together with the excess
    ``omega(g(xi, mu)) - kappa1(omega(xi))`` over all samples.  Both are
    multiplied by `inflation` and checked on a fresh sample.

    Raises
    ------
    FitFailed
        When the fresh sample violates the fitted bound.
    """
    xs, us = [], []
    for xi, u in space.batches(sys.n, sys.m, 1):
        xs.append(xi)
        us.append(u[:, 0, :])
    xi = np.concatenate(xs)
    u = np.concatenate(us)
    w0 = omega(xi)
    w1 = omega(sys.step(xi, np.zeros_like(u)))
    if np.any((w0 <= ATOL) & (w1 > ATOL)):
        raise FitFailed("states with zero measurement leave the zero set under zero input")
    k1 = kfun.scale(_envelope(w0, w1), inflation)
    if sys.m == 0:
        k2 = kfun.zero()
    else:
        un = np.linalg.norm(u, axis=-1)
        resid = omega(sys.step(xi, u)) - kfun.evaluate(k1, w0)
        zs = xi[w0 <= ATOL][:slice_states]
        origin = np.zeros((1, sys.n))
        if omega(origin)[0] <= ATOL:
            zs = np.concatenate([origin, zs])
        ts, ys = [un], [resid]
        for z in zs:
            ts.append(un)
            ys.append(omega(sys.step(np.broadcast_to(z, (u.shape[0], sys.n)), u)))
        k2 = kfun.scale(_envelope(np.concatenate(ts), np.concatenate(ys)), inflation)
    kb = KBound(k1, k2, "estimated")
    report = check_k_bound(kb, sys, omega, space.with_seed(space.seed + 1))
    if not report.verdict:
        raise FitFailed(f"fitted K-bound violated on a fresh sample: {report.witness}", report)
    return kb


# -- conversions -----------------------------------------------------------

def implication_to_max(cert: Certificate, kb: KBound) -> Certificate:
    """Max-form certificate from an implication-form one.

    ``alpha_max = id - min{alpha_imp, id/2}`` and
    ``gamma_max = upper o (theta_M o lower^-1 o gamma_imp + zeta_M)``.

    Raises
    ------
    RateTooLarge
        If ``id - min{alpha_imp, id/2}`` is not strictly increasing.
    """
    _require(cert, ImplicationForm)
    a = kfun.pointwise_min(cert.form.alpha, kfun.linear(0.5)) if not cert.form.alpha.is_zero \
        else kfun.zero()
    if a.is_zero:
        raise RateTooLarge("a zero decrease rate gives no max-form rate below the identity")
    s, d, tail = kfun.difference(kfun.identity(), a)
    if np.any(np.diff(d) <= 0) or tail <= 0:
        raise RateTooLarge("id - alpha_imp is not strictly increasing")
    alpha_max = kfun.from_points(s, d, tail)
    theta, zeta = propagate_k_bound(kb, cert.M)
    inner = kfun.compose(theta, kfun.compose(kfun.inverse(cert.lower), cert.form.gamma))
    gamma_max = kfun.compose(cert.upper, kfun.pointwise_add(inner, zeta))
    prov = dict(cert.provenance)
    prov.update({"converted_from": "implication", "k_bound": kb.provenance})
    return Certificate(cert.V, MaxForm(alpha_max, gamma_max), cert.lower, cert.upper,
                       cert.M, cert.omega, prov)


def _decay_floor(alpha: PLFunction) -> PLFunction:
    """Strictly increasing minorant of ``id - alpha`` on [0, 1], slope 1/2 beyond.

    The running minimum from the right of ``id - alpha`` on ``[0, 1]``
    (capped by 1/2, the infimum of ``s/2`` over ``s > 1``) is computed
    exactly, flat pieces are tilted down slightly, and the function is
    continued with slope 1/2.
    """
    p = np.union1d(alpha.s[alpha.s < 1.0], [1.0])
    d = p - kfun.evaluate(alpha, p)
    pts_s, pts_v = [p[-1]], [min(d[-1], 0.5)]
    m = pts_v[0]
    for k in range(p.size - 2, -1, -1):
        if d[k] >= m:
            pts_s.append(p[k])
            pts_v.append(m)
            continue
        if d[k + 1] > m:
            cross = p[k] + (p[k + 1] - p[k]) * (m - d[k]) / (d[k + 1] - d[k])
            pts_s.append(cross)
            pts_v.append(m)
        pts_s.append(p[k])
        pts_v.append(d[k])
        m = d[k]
    s = np.array(pts_s[::-1])
    v = np.array(pts_v[::-1])
    s, first = np.unique(s, return_index=True)
    v = v[first]
    if np.any(v[1:] <= 0):
        raise ConstructionFailed("decrease id - alpha vanishes at a positive argument; "
                                 "alpha_max must lie strictly below the identity")
    for k in range(v.size - 2, 0, -1):
        if v[k] >= v[k + 1]:
            v[k] = v[k + 1] * (1.0 - 1e-9)
    return kfun.from_points(s, v, 0.5)


def _rescaling(alpha: PLFunction, h: PLFunction, a_grid: np.ndarray) -> PLFunction:
    """Convex PL ``rho`` with ``rho(v) - rho(alpha(v)) >= h(v)`` for all ``v``.

    On ``[a_i, a_(i+1)]`` the slope is the max of 1, the previous slope and
    ``sup h(v) / (v - alpha(v))`` over ``v <= alpha^-1(a_(i+1))``.  Both
    ``h`` and ``alpha`` are affine between consecutive points of the
    evaluation set below, so the sup of the ratio is attained on it.
    """
    ainv = kfun.inverse(alpha)
    pre = kfun.evaluate(ainv, a_grid)
    q = np.union1d(np.union1d(alpha.s, h.s), pre)
    q = q[q > 0]
    gap = q - kfun.evaluate(alpha, q)
    if np.any(gap <= 0):
        raise ConstructionFailed("alpha_max touches the identity; refine its representation")
    ratio = np.maximum.accumulate(kfun.evaluate(h, q) / gap)
    if 1.0 - alpha.tail_slope <= 0:
        raise ConstructionFailed("alpha_max has tail slope >= 1")
    sup_all = max(ratio[-1], h.tail_slope / (1.0 - alpha.tail_slope))
    pos = np.searchsorted(q, pre, side="right") - 1
    need = np.where(pos >= 0, ratio[np.maximum(pos, 0)], 0.0)
    slopes = np.maximum.accumulate(np.maximum(need, 1.0))
    a = np.concatenate(([0.0], a_grid))
    v = np.concatenate(([0.0], np.cumsum(slopes * np.diff(a))))
    tail = max(slopes[-1], sup_all)
    return kfun.from_points(a, v, tail)


def max_to_dissipative(cert: Certificate, s_max: float = 10.0, grid: int = 512) -> Certificate:
    """Dissipative-form certificate ``W = rho o V`` from a max-form one.

    ``alpha_diss = min{h o rho^-1, id} / 2`` and ``gamma_diss = rho o gamma_max``
    where ``h`` is :func:`_decay_floor` of ``alpha_max`` and ``rho`` comes
    from :func:`_rescaling`.

    Raises
    ------
    ConstructionFailed
        If ``alpha_max`` is not strictly below the identity.
    """
    _require(cert, MaxForm)
    alpha = cert.form.alpha
    if alpha.kind is not Kind.KINF:
        raise ConstructionFailed("alpha_max must be of class K-infinity")
    h = _decay_floor(alpha)
    a_grid = np.union1d(kfun.check_grid(s_max, grid), alpha.s[alpha.s > 0])
    rho = _rescaling(alpha, h, a_grid)
    alpha_d = kfun.scale(kfun.pointwise_min(kfun.compose(h, kfun.inverse(rho)), kfun.identity()), 0.5)
    gamma_d = kfun.compose(rho, cert.form.gamma)
    V = cert.V

    def W(x):
        return kfun.evaluate(rho, np.asarray(V(x), dtype=float))

    prov = dict(cert.provenance)
    prov.update({"converted_from": "max", "rho": rho.to_dict(), "h": h.to_dict()})
    return Certificate(W, DissipativeForm(alpha_d, gamma_d), kfun.compose(rho, cert.lower),
                       kfun.compose(rho, cert.upper), cert.M, cert.omega, prov)


def iss_estimate(cert: Certificate) -> tuple[KLFunction, PLFunction]:
    """``(beta, gamma)`` of the trajectory bound implied by a one-step max form.

    ``beta(s, k) = lower^-1(alpha^k(upper(s)))`` and ``gamma = lower^-1 o gamma_max``.
    """
    _require(cert, MaxForm)
    if cert.M != 1:
        raise ValueError("trajectory bounds are derived for one-step certificates only")
    beta = KLFunction(cert.form.alpha, cert.lower, cert.upper)
    return beta, kfun.compose(kfun.inverse(cert.lower), cert.form.gamma)
