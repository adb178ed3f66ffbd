"""Network certificates from subsystem estimates, and back.

:func:`compose_certificate` turns per-block estimates with gains that
satisfy the cyclic small-gain test into a max-form certificate for the
whole network.  :func:`reverse_decompose` goes the other way: from a
one-step max-form certificate it builds block functions and a single
uniform gain, showing that the small-gain hypotheses are not conservative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kfun
from .certify import ATOL, RTOL, Certificate, MaxForm, SampleSpace, _input_norm, _run
from .dtsim import (DimensionMismatch, DiscreteSystem, MeasurementFunction, MonotonicNorm,
                    composite_measurement, simulate_batch)
from .gaingraph import GainNetwork, SigmaScaling, check_small_gain, construct_sigma
from .kfun import PLFunction
from .report import CheckReport

__all__ = [
    "SubsystemEstimate", "DecompositionResult", "SmallGainViolated", "NoValidMhat",
    "check_assumption", "compose_certificate", "find_Mhat", "reverse_decompose",
    "check_measurement_split",
]


class SmallGainViolated(ValueError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class NoValidMhat(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SubsystemEstimate:
    """Block function ``W`` with ``lower(omega(xi)) <= W(xi) <= upper(omega(xi))``.

    `W` and `omega` act on block states of shape ``(..., n_i)``.
    """

    W: Callable
    omega: MeasurementFunction
    lower: PLFunction = field(default_factory=kfun.identity)
    upper: PLFunction = field(default_factory=kfun.identity)

    def value(self, x) -> np.ndarray:
        return np.asarray(self.W(np.asarray(x, dtype=float)), dtype=float)


def _blocks(sys: DiscreteSystem):
    if sys.blocks is None:
        raise ValueError("the system needs a block structure")
    return sys.blocks


def check_assumption(net: GainNetwork, estimates: Sequence[SubsystemEstimate],
                     sys: DiscreteSystem, space: SampleSpace) -> CheckReport:
    """Per-block ``M``-step estimates along solutions of the composite system.

    Checks ``W_i(x_i(M)) <= max{max_j gains[i][j](W_j(xi_j)), input_gains[i](|u|)}``
    for every block ``i`` at every sample; the reported margin is the worst
    over blocks.
    """
    blocks = _blocks(sys)
    if len(estimates) != net.l or len(blocks) != net.l:
        raise DimensionMismatch("need one estimate and one block per network node")

    def ev(xi, u):
        xM = simulate_batch(sys, xi, u, net.M)[-1]
        w0 = np.stack([e.value(xi[:, b]) for e, b in zip(estimates, blocks)], axis=-1)
        wM = np.stack([e.value(xM[:, b]) for e, b in zip(estimates, blocks)], axis=-1)
        un = _input_norm(u)
        rhs = np.empty_like(wM)
        for i in range(net.l):
            terms = [kfun.evaluate(net.input_gains[i], un)]
            terms += [kfun.evaluate(g, w0[:, j]) for j, g in enumerate(net.gains[i]) if not g.is_zero]
            rhs[:, i] = np.max(np.stack(terms), axis=0)
        excess = wM - rhs - (ATOL + RTOL * np.maximum(wM, rhs))
        i = np.argmax(excess, axis=1)
        rows = np.arange(xi.shape[0])
        lhs, r = wM[rows, i], rhs[rows, i]
        return {"lhs": lhs, "rhs": r, "scale": np.maximum(lhs, r), "info": {"block": i}}

    return _run(space, sys.n, sys.m, net.M, ev, {"check": "assumption", "M": net.M})


def compose_certificate(net: GainNetwork, estimates: Sequence[SubsystemEstimate],
                        mu: MonotonicNorm, blocks, eps: float | None = None,
                        s_max: float = 10.0, grid: int = 512) -> tuple[Certificate, SigmaScaling]:
    """Max-form certificate ``V(x) = max_i sigma_i^-1(W_i(x_i))``.

    Rates are ``alpha = max_ij sigma_i^-1 o gains[i][j] o sigma_j`` (``id/2``
    when there is no coupling at all) and
    ``gamma = max_i sigma_i^-1 o input_gains[i]``.  With ``mu_i = mu(e_i)``
    and ``c = mu(1, ..., 1)`` the sandwich bounds for
    ``omega = mu(omega_1, ..., omega_l)`` are
    ``upper(s) = max_i sigma_i^-1(upper_i(s / mu_i))`` and
    ``lower(s) = min_i sigma_i^-1(lower_i(s / c))``.

    Raises
    ------
    SmallGainViolated
        If the cyclic small-gain test fails.
    """
    report = check_small_gain(net, s_max, grid)
    if not report.verdict:
        raise SmallGainViolated(f"small-gain condition fails: {report.witness}", report)
    sig = construct_sigma(net, eps, s_max, grid)
    inv = [kfun.inverse(s) for s in sig.sigma]
    pairs = [kfun.compose(inv[i], kfun.compose(g, sig.sigma[j])) for i, j, g in net.edges()]
    alpha = kfun.max_of(pairs) if pairs else kfun.linear(0.5)
    gamma = kfun.max_of(kfun.compose(inv[i], g) for i, g in enumerate(net.input_gains))
    unit = mu.unit_values(net.l)
    c = mu.equivalence_constant(net.l)
    upper = kfun.max_of(kfun.compose(inv[i], kfun.compose(e.upper, kfun.linear(1.0 / unit[i])))
                        for i, e in enumerate(estimates))
    lows = [kfun.compose(inv[i], kfun.compose(e.lower, kfun.linear(1.0 / c)))
            for i, e in enumerate(estimates)]
    lower = kfun.pointwise_min(*lows) if len(lows) > 1 else lows[0]
    blocks = tuple(np.asarray(b, dtype=int) for b in blocks)

    def V(x):
        x = np.asarray(x, dtype=float)
        vals = [kfun.evaluate(inv[i], e.value(x[..., b])) for i, (e, b) in enumerate(zip(estimates, blocks))]
        return np.max(np.stack(vals, axis=-1), axis=-1)

    omega = composite_measurement([e.omega for e in estimates], mu, blocks)
    cert = Certificate(V, MaxForm(alpha, gamma), lower, upper, net.M, omega,
                       {"construction": "composed", "eps": sig.eps, "sigma_margin": sig.margin})
    return cert, sig


def find_Mhat(alpha: PLFunction, lower: PLFunction, upper: PLFunction, c: float = 1.0,
              s_max: float = 10.0, grid: int = 512, M_cap: int = 64,
              tol: float = 1e-9) -> int | None:
    """Smallest ``M`` in ``1..M_cap`` with ``lower^-1 o alpha^M o upper o (c id) < id``.

    Returns None when no such ``M`` exists up to `M_cap`.
    """
    if c < 1:
        raise ValueError("c must be at least 1")
    low_inv = kfun.inverse(lower)
    inner = kfun.compose(upper, kfun.linear(c))
    power = None
    for M in range(1, M_cap + 1):
        power = alpha if power is None else kfun.compose(alpha, power)
        chi = kfun.compose(low_inv, kfun.compose(power, inner))
        if kfun.below_identity(chi, s_max, grid, tol).verdict:
            return M
    return None


@dataclass(frozen=True, eq=False)
class DecompositionResult:
    """Block functions ``W_i = w_i omega_i`` with uniform gain ``chi``."""

    Mhat: int
    chi: PLFunction
    weights: np.ndarray
    network: GainNetwork
    gamma_tilde: PLFunction
    c: float
    c_eff: float
    estimates: tuple = ()

    def to_dict(self) -> dict:
        return {"Mhat": self.Mhat, "chi": self.chi.to_dict(), "weights": self.weights.tolist(),
                "gamma_tilde": self.gamma_tilde.to_dict(), "c": self.c, "c_eff": self.c_eff,
                "network": self.network.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _scaled(omega: MeasurementFunction, w: float):
    return lambda x: w * omega(x)


def reverse_decompose(cert: Certificate, omegas: Sequence[MeasurementFunction],
                      mu: MonotonicNorm, M_cap: int = 64, s_max: float = 10.0,
                      grid: int = 512) -> DecompositionResult:
    """Block estimates and uniform gains from a one-step max-form certificate.

    ``W_i = mu(e_i) omega_i`` and every interconnection gain equals
    ``chi = lower^-1 o alpha^Mhat o upper o (c_eff id)``; the input gains are
    ``lower^-1 o gamma_max``.  Here ``c = max(1, mu(1, ..., 1))`` bounds
    ``mu(z) <= c |z|_inf`` and ``c_eff = c / min(1, min_i mu(e_i))`` also
    absorbs block weights below one.  Requires
    ``omega = mu(omega_1, ..., omega_l)``; see :func:`check_measurement_split`.

    Raises
    ------
    NoValidMhat
        When no horizon up to `M_cap` makes ``chi`` fall below the identity.
    """
    if not isinstance(cert.form, MaxForm) or cert.M != 1:
        raise ValueError("reverse decomposition needs a one-step max-form certificate")
    l = len(omegas)
    unit = mu.unit_values(l)
    c = max(1.0, mu.equivalence_constant(l))
    c_eff = c / min(1.0, float(np.min(unit)))
    Mhat = find_Mhat(cert.form.alpha, cert.lower, cert.upper, c_eff, s_max, grid, M_cap)
    if Mhat is None:
        raise NoValidMhat(f"no horizon up to {M_cap} brings chi below the identity")
    chi = kfun.compose(kfun.inverse(cert.lower),
                       kfun.compose(kfun.iterate(cert.form.alpha, Mhat),
                                    kfun.compose(cert.upper, kfun.linear(c_eff))))
    gt = kfun.compose(kfun.inverse(cert.lower), cert.form.gamma)
    net = GainNetwork(l, tuple(tuple(chi for _ in range(l)) for _ in range(l)),
                      tuple(gt for _ in range(l)), Mhat)
    ests = tuple(SubsystemEstimate(_scaled(o, float(w)), o, kfun.linear(float(w)), kfun.linear(float(w)))
                 for o, w in zip(omegas, unit))
    return DecompositionResult(Mhat, chi, unit, net, gt, c, c_eff, ests)


def check_measurement_split(omega: MeasurementFunction, omegas: Sequence[MeasurementFunction],
                            mu: MonotonicNorm, sys: DiscreteSystem, space: SampleSpace,
                            direction: str = "both") -> CheckReport:
    """Sampled check that ``omega`` splits as ``mu(omega_1(x_1), ..., omega_l(x_l))``.

    ``direction="lower"`` checks ``omega >= mu(...)``, which bounds the block
    functions after the horizon; ``"upper"`` checks ``omega <= mu(...)``,
    which bounds the initial value through ``mu(z) <= c |z|_inf``;
    ``"both"`` checks equality within tolerance.  The decomposition uses
    both directions.
    """
    if direction not in ("lower", "upper", "both"):
        raise ValueError(f"unknown direction {direction!r}")
    split = composite_measurement(list(omegas), mu, _blocks(sys))

    def ev(xi, u):
        a, b = split(xi), omega(xi)
        if direction == "lower":
            lhs, rhs = a, b
        elif direction == "upper":
            lhs, rhs = b, a
        else:
            lhs, rhs = np.abs(a - b), np.zeros_like(a)
        return {"lhs": lhs, "rhs": rhs, "scale": np.maximum(a, b)}

    return _run(space, sys.n, 0, 0, ev, {"check": "measurement_split", "direction": direction})
