"""Ready-made systems with their certificates and gains.

Each builder returns a :class:`Scenario` bundling a system, a measurement,
the certificates or gain networks known for it and a recommended sample
space.  The random generators at the bottom produce families of networks
with certificates that hold by construction, used to exercise the
conversions and the compose/decompose round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kfun
from .certify import Certificate, ImplicationForm, KBound, MaxForm, SampleSpace, Strategy
from .composer import SubsystemEstimate
from .dtsim import (DiscreteSystem, MeasurementFunction, MeasurementTag, MonotonicNorm,
                    augment_incremental, norm_measure)
from .gaingraph import GainNetwork

__all__ = [
    "Scenario", "ObserverNetwork", "SCENARIOS", "get", "example1_gain",
    "example1", "polar_example", "oscillator_sync", "incremental_demo", "observer_demo",
    "random_contraction_network", "random_feasible_gains",
]


@dataclass(frozen=True, eq=False)
class Scenario:
    """A system together with what is known about its stability.

    Attributes
    ----------
    certificate : Certificate or None
        Network-level certificate, if one is available.
    network, estimates, mu, block_omegas
        Subsystem description used by the composer, when available.
    k_bound : KBound or None
    extras : dict
        Scenario-specific helpers (coordinate maps, harnesses, ...).
    """

    name: str
    system: DiscreteSystem
    omega: MeasurementFunction
    space: SampleSpace
    certificate: Certificate | None = None
    network: GainNetwork | None = None
    estimates: tuple = ()
    mu: MonotonicNorm | None = None
    block_omegas: tuple = ()
    k_bound: KBound | None = None
    extras: dict = field(default_factory=dict)

    def to_spec(self) -> dict:
        """CLI spec file reproducing this scenario."""
        spec = {"version": 1, "scenario": self.name,
                "sample_space": _space_dict(self.space)}
        if self.network is not None:
            spec["network"] = self.network.to_dict()
        if self.certificate is not None:
            c = self.certificate
            spec["certificate"] = {"form": c.form.name, "alpha": c.form.alpha.to_dict(),
                                   "gamma": c.form.gamma.to_dict(), "lower": c.lower.to_dict(),
                                   "upper": c.upper.to_dict(), "M": c.M}
        if self.k_bound is not None:
            spec["k_bound"] = {"kappa1": self.k_bound.kappa1.to_dict(),
                               "kappa2": self.k_bound.kappa2.to_dict()}
        return spec


def _space_dict(sp: SampleSpace) -> dict:
    def f(v):
        a = np.asarray(v, dtype=float)
        return float(a) if a.ndim == 0 else a.tolist()
    return {"state_lo": f(sp.state_lo), "state_hi": f(sp.state_hi), "input_lo": f(sp.input_lo),
            "input_hi": f(sp.input_hi), "n_samples": sp.n_samples, "seed": sp.seed,
            "strategy": sp.strategy.value, "zero_input_fraction": sp.zero_input_fraction}


def _abs_measure() -> MeasurementFunction:
    return MeasurementFunction(lambda x: np.linalg.norm(x, axis=-1), MeasurementTag.NORM, "|x|")


def _max_abs(x):
    return np.max(np.abs(x), axis=-1)


# -- worked example ----------------------------------------------------------

def example1_gain(mode: str = "upper") -> kfun.PLFunction:
    """``max{s - s^2, s/2}`` on the default dyadic grid."""
    return kfun.from_callable(lambda s: np.maximum(s - s * s, 0.5 * s), mode=mode, tail_slope=0.5)


def _example1_update(x, u):
    u0 = u[..., 0]
    x1, x2 = x[..., 0], x[..., 1]
    a = np.maximum(np.maximum(x2 - x2 * x2, 0.5 * x2), u0)
    b = np.maximum(np.maximum(x1 - x1 * x1, 0.5 * x1), u0)
    return np.stack([a, b], axis=-1)


def example1() -> Scenario:
    """Two scalar blocks coupled through ``max{s - s^2, s/2}``.

    Certificate ``V = |x|_inf`` with ``alpha = max{s - s^2, s/2}``,
    ``gamma = id`` and ``M = 1``; block functions ``W_i = |x_i|`` with the
    same cross gains and unit input gains.
    """
    g = example1_gain()
    sys = DiscreteSystem(2, 1, _example1_update, "example1", [[0], [1]])
    omega = norm_measure(np.inf)
    net = GainNetwork.from_matrix([[None, g], [g, None]], [kfun.identity()] * 2, M=1)
    block = _abs_measure()
    est = tuple(SubsystemEstimate(lambda x: np.abs(x[..., 0]), block) for _ in range(2))
    cert = Certificate(_max_abs, MaxForm(g, kfun.identity()), kfun.identity(), kfun.identity(),
                       1, omega, {"construction": "bundled"})
    kb = KBound(g, kfun.identity())
    space = SampleSpace(-2.0, 2.0, -1.0, 1.0)
    return Scenario("example1", sys, omega, space, cert, net, est, MonotonicNorm.max_norm(),
                    (block, block), kb)


# -- measurement that is not a norm -----------------------------------------

def _polar_update(x, u):
    r, th = x[..., 0], x[..., 1]
    s = np.sin(th)
    return np.stack([r + 1.0 + s, 0.25 * (1.0 + s) + th], axis=-1)


def polar_example() -> Scenario:
    """Planar system in polar coordinates ``(r, theta)`` with ``omega = 1 + sin(theta)``.

    The angle creeps towards ``3 pi / 2`` (mod ``2 pi``), where the radius
    stops changing.
    """
    sys = DiscreteSystem(2, 0, _polar_update, "polar")
    omega = MeasurementFunction(lambda x: 1.0 + np.sin(x[..., 1]), MeasurementTag.SET_DISTANCE,
                                "1 + sin(theta)")
    space = SampleSpace([0.0, 0.0], [2.0, 2 * np.pi], 0.0, 0.0, n_samples=1000)
    return Scenario("polar", sys, omega, space)


# -- oscillator synchronization ---------------------------------------------

def oscillator_sync(l: int = 3, f: Sequence[Callable] | None = None, coupling=0.1,
                    upsilon=None, psi: Callable | None = None,
                    neighbors: Sequence[Sequence[int]] | None = None, p: int = 1) -> Scenario:
    """Error/average coordinates of a network of coupled nodes.

    Nodes follow ``z_i+ = f_i(z_i) + sum_(j in N_i) a_ij Y psi(z_i, z_j)``.
    With ``zbar`` the average and ``e_i = z_i - zbar`` the state is stacked
    as ``(e_1, ..., e_l, zbar)``, and
    ``e_i+ = f_i(zbar + e_i) + sum_j a_ij Y psi(zbar + e_i, zbar + e_j)
    - (1/l) sum_j f_j(zbar + e_j)``,
    ``zbar+ = (1/l) sum_j f_j(zbar + e_j)``.
    The measurement is the max of the error norms; the average block is
    not measured.

    Defaults: ``f_i(z) = z/2``, ``psi(x, y) = y - x``, uniform weight
    `coupling`, ``Y = I`` and all-to-all neighbours.
    """
    f = list(f) if f is not None else [lambda z: 0.5 * z] * l
    Y = np.eye(p) if upsilon is None else np.atleast_2d(np.asarray(upsilon, dtype=float))
    psi = psi if psi is not None else (lambda x, y: y - x)
    if neighbors is None:
        neighbors = [[j for j in range(l) if j != i] for i in range(l)]
    A = np.zeros((l, l))
    if np.ndim(coupling) == 0:
        for i, nb in enumerate(neighbors):
            A[i, list(nb)] = float(coupling)
    else:
        A = np.asarray(coupling, dtype=float)
    if not np.allclose(A, A.T):
        raise ValueError("coupling weights must be symmetric")

    def node_update(z, u):
        zs = [z[..., i * p:(i + 1) * p] for i in range(l)]
        out = []
        for i in range(l):
            acc = np.asarray(f[i](zs[i]), dtype=float)
            for j in neighbors[i]:
                acc = acc + A[i, j] * (psi(zs[i], zs[j]) @ Y.T)
            out.append(acc)
        return np.concatenate(out, axis=-1)

    def err_update(x, u):
        zbar = x[..., l * p:]
        es = [x[..., i * p:(i + 1) * p] for i in range(l)]
        zs = [zbar + e for e in es]
        fs = [np.asarray(f[i](zs[i]), dtype=float) for i in range(l)]
        mean_f = sum(fs) / l
        out = []
        for i in range(l):
            acc = fs[i] - mean_f
            for j in neighbors[i]:
                acc = acc + A[i, j] * (psi(zs[i], zs[j]) @ Y.T)
            out.append(acc)
        out.append(mean_f)
        return np.concatenate(out, axis=-1)

    def to_error(z):
        z = np.asarray(z, dtype=float)
        parts = z.reshape(z.shape[:-1] + (l, p))
        zbar = parts.mean(axis=-2)
        e = parts - zbar[..., None, :]
        return np.concatenate([e.reshape(z.shape[:-1] + (l * p,)), zbar], axis=-1)

    def from_error(x):
        x = np.asarray(x, dtype=float)
        zbar = x[..., l * p:]
        e = x[..., :l * p].reshape(x.shape[:-1] + (l, p))
        return (e + zbar[..., None, :]).reshape(x.shape[:-1] + (l * p,))

    blocks = [np.arange(i * p, (i + 1) * p) for i in range(l)] + [np.arange(l * p, (l + 1) * p)]
    sys = DiscreteSystem((l + 1) * p, 0, err_update, "oscillator", blocks)
    node_sys = DiscreteSystem(l * p, 0, node_update, "oscillator_nodes",
                              [np.arange(i * p, (i + 1) * p) for i in range(l)])

    def err_measure(x):
        e = x[..., :l * p].reshape(x.shape[:-1] + (l, p))
        return np.max(np.linalg.norm(e, axis=-1), axis=-1)

    omega = MeasurementFunction(err_measure, MeasurementTag.BLOCK_NORM, "max_i |e_i|")
    space = SampleSpace(-2.0, 2.0, 0.0, 0.0, n_samples=1000)
    return Scenario("oscillator", sys, omega, space,
                    extras={"node_system": node_sys, "to_error": to_error, "from_error": from_error,
                            "l": l, "p": p})


# -- incremental stability ---------------------------------------------------

def incremental_demo(sys: DiscreteSystem | None = None) -> Scenario:
    """Two copies of an autonomous system measured by their distance.

    For the default ``x+ = x/2`` the certificate ``V(xi, zeta) = |xi - zeta|``
    with ``alpha = s/2`` and ``M = 1`` is bundled.
    """
    default = sys is None
    if default:
        sys = DiscreteSystem(1, 0, lambda x, u: 0.5 * x, "half")
    aug, omega = augment_incremental(sys)
    cert = None
    if default:
        cert = Certificate(omega, MaxForm(kfun.linear(0.5), kfun.zero()), kfun.identity(),
                           kfun.identity(), 1, omega, {"construction": "bundled"})
    space = SampleSpace(-2.0, 2.0, 0.0, 0.0)
    return Scenario("incremental", aug, omega, space, cert, extras={"base": sys})


# -- distributed observer ----------------------------------------------------

@dataclass(frozen=True)
class ObserverNetwork:
    """Chain of scalar plants observed by local observers that talk to neighbours.

    Plant ``x_i+ = a x_i + c sum_(j in N_i) x_j`` with outputs
    ``y_i = x_i + d sum_(j in N_i) x_j``.  Observer ``i`` runs
    ``xh_i+ = a xh_i + c sum_j xh_j + L (y_i - xh_i - d sum_j xh_j)`` using
    only its own output and the outputs and estimates of its neighbours, so
    the error obeys ``e_i+ = (a - L) e_i + (c - L d) sum_j e_j``.
    """

    l: int = 4
    a: float = 0.6
    c: float = 0.1
    d: float = 0.125
    L: float = 0.4

    @property
    def neighbors(self) -> list[list[int]]:
        return [[j for j in (i - 1, i + 1) if 0 <= j < self.l] for i in range(self.l)]

    def outputs(self, x):
        x = np.asarray(x, dtype=float)
        y = x.copy()
        for i, nb in enumerate(self.neighbors):
            for j in nb:
                y[..., i] += self.d * x[..., j]
        return y

    def plant_step(self, x):
        x = np.asarray(x, dtype=float)
        out = self.a * x
        for i, nb in enumerate(self.neighbors):
            for j in nb:
                out[..., i] = out[..., i] + self.c * x[..., j]
        return out

    def local_observer(self, xh_i, y_i, y_nb, xh_nb):
        """Next estimate of one node from its own and its neighbours' messages."""
        s = sum(xh_nb) if len(xh_nb) else 0.0
        return self.a * xh_i + self.c * s + self.L * (y_i - xh_i - self.d * s)

    def run(self, x0, xh0, K: int) -> tuple[np.ndarray, np.ndarray]:
        """Synchronous message-passing simulation; returns plant and estimate trajectories."""
        x = np.array(x0, dtype=float)
        xh = np.array(xh0, dtype=float)
        X, XH = [x.copy()], [xh.copy()]
        for _ in range(K):
            y = self.outputs(x)
            inbox = [[(y[..., j], xh[..., j]) for j in nb] for nb in self.neighbors]
            nxt = np.empty_like(xh)
            for i in range(self.l):
                nxt[..., i] = self.local_observer(xh[..., i], y[..., i],
                                                  [m[0] for m in inbox[i]], [m[1] for m in inbox[i]])
            x = self.plant_step(x)
            xh = nxt
            X.append(x.copy())
            XH.append(xh.copy())
        return np.stack(X), np.stack(XH)

    def composite(self) -> DiscreteSystem:
        """Plant and observers as one system on ``(x_1..x_l, xh_1..xh_l)``."""
        l = self.l

        def update(z, u):
            x, xh = z[..., :l], z[..., l:]
            y = self.outputs(x)
            nxt = np.empty_like(xh)
            for i, nb in enumerate(self.neighbors):
                nxt[..., i] = self.local_observer(xh[..., i], y[..., i],
                                                  [y[..., j] for j in nb], [xh[..., j] for j in nb])
            return np.concatenate([self.plant_step(x), nxt], axis=-1)

        return DiscreteSystem(2 * l, 0, update, "observer", [[i, l + i] for i in range(l)])


def observer_demo(l: int = 4) -> Scenario:
    """Chain observer with block errors ``W_i = |xh_i - x_i|``.

    Gains ``s/2`` on the diagonal and ``s/4`` towards each neighbour,
    ``M = 1`` and the max norm.  Error rates ``0.2`` on the own error and
    ``0.05`` per neighbour satisfy these gains because
    ``0.2 p + 0.1 q <= max{p/2, q/4}`` for all ``p, q >= 0``.
    """
    obs = ObserverNetwork(l)
    sys = obs.composite()

    def block_err(z):
        return np.abs(z[..., 1] - z[..., 0])

    bm = MeasurementFunction(block_err, MeasurementTag.BLOCK_NORM, "|xh_i - x_i|")
    est = tuple(SubsystemEstimate(block_err, bm) for _ in range(l))
    gains = [[kfun.linear(0.5) if i == j else (kfun.linear(0.25) if j in obs.neighbors[i] else None)
              for j in range(l)] for i in range(l)]
    net = GainNetwork.from_matrix(gains, None, M=1)
    omega = MeasurementFunction(lambda z: np.max(np.abs(z[..., l:] - z[..., :l]), axis=-1),
                                MeasurementTag.COMPOSITE, "|xh - x|_inf")
    space = SampleSpace(-2.0, 2.0, 0.0, 0.0, n_samples=1000)
    return Scenario("observer", sys, omega, space, None, net, est, MonotonicNorm.max_norm(),
                    (bm,) * l, extras={"observer": obs})


SCENARIOS = {
    "example1": example1,
    "polar": polar_example,
    "oscillator": oscillator_sync,
    "incremental": incremental_demo,
    "observer": observer_demo,
}


def get(name: str) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


# -- random families ---------------------------------------------------------

def _soft(x):
    """Odd map with ``|soft(x)| = min{|x|, 1/2 + |x|/2}``."""
    ax = np.abs(x)
    return np.sign(x) * np.minimum(ax, 0.5 + 0.5 * ax)


def _soft_bound() -> kfun.PLFunction:
    return kfun.from_points([0.0, 1.0], [0.0, 1.0], 0.5)


def random_contraction_network(rng: np.random.Generator, l: int | None = None, M: int = 1,
                               density: float = 0.7) -> Scenario:
    """Random ``x+ = A soft(x) + B u`` with scalar blocks and ``|A|_inf < 1``.

    Bundled, all valid by construction for ``V = omega = |x|_inf``:

    * implication form with horizon `M`:
      ``alpha = (1 - a_M)/2 s``, ``gamma = 2 b_M / (1 - a_M) s`` where
      ``a_M = a^M`` and ``b_M = b (1 + a + ... + a^(M-1))``;
    * K-bound ``kappa1 = a |soft|``, ``kappa2 = b s``;
    * one-step max form ``alpha = (1 + a)/2 s``, ``gamma = (1 + a)/(1 - a) b s``
      and the per-block network with ``gains[i][j] = (1 + eta) r_i s`` on the
      support of ``A`` and ``input_gains[i] = (1 + 1/eta) b_i s``,
      ``eta = (1 - a) / (2 a)``.

    ``a = |A|_inf``, ``b = |B|_inf``, ``r_i`` and ``b_i`` are the row sums.
    """
    l = int(rng.integers(1, 5)) if l is None else l
    mask = rng.random((l, l)) < density
    mask[np.arange(l), rng.integers(0, l, size=l)] = True
    A = rng.uniform(-1, 1, size=(l, l)) * mask
    a = float(rng.uniform(0.3, 0.9))
    rows = np.abs(A).sum(axis=1)
    A = A / rows.max() * a
    B = rng.uniform(-1, 1, size=(l, 1))
    B = B / np.abs(B).sum(axis=1).max() * float(rng.uniform(0.2, 1.0))
    a = float(np.abs(A).sum(axis=1).max())
    b = float(np.abs(B).sum(axis=1).max())
    r = np.abs(A).sum(axis=1)
    bi = np.abs(B).sum(axis=1)

    def update(x, u):
        return _soft(x) @ A.T + u @ B.T

    sys = DiscreteSystem(l, 1, update, "random_contraction", [[i] for i in range(l)])
    omega = norm_measure(np.inf)
    aM = a ** M
    bM = b * sum(a ** k for k in range(M))
    imp = Certificate(_max_abs, ImplicationForm(kfun.linear((1 - aM) / 2), kfun.linear(2 * bM / (1 - aM))),
                      kfun.identity(), kfun.identity(), M, omega, {"construction": "random"})
    kb = KBound(kfun.scale(_soft_bound(), a), kfun.linear(b) if b > 0 else kfun.zero())
    eta = (1 - a) / (2 * a)
    mx = Certificate(_max_abs, MaxForm(kfun.linear((1 + eta) * a), kfun.linear((1 + 1 / eta) * b)),
                     kfun.identity(), kfun.identity(), 1, omega, {"construction": "random"})
    gains = [[kfun.linear((1 + eta) * r[i]) if mask[i, j] and A[i, j] != 0 else None for j in range(l)]
             for i in range(l)]
    net = GainNetwork.from_matrix(gains, [kfun.linear((1 + 1 / eta) * bi[i]) for i in range(l)], M=1)
    block = _abs_measure()
    est = tuple(SubsystemEstimate(lambda x: np.abs(x[..., 0]), block) for _ in range(l))
    space = SampleSpace(-2.0, 2.0, -1.0, 1.0, seed=int(rng.integers(2**31)))
    return Scenario("random_contraction", sys, omega, space, mx, net, est, MonotonicNorm.max_norm(),
                    (block,) * l, kb, extras={"implication": imp, "A": A, "B": B, "M": M})


def random_feasible_gains(rng: np.random.Generator, l: int | None = None,
                          density: float = 0.6, nonlinear: bool = True) -> GainNetwork:
    """Random gain network whose cycles all lie strictly below the identity.

    With random potentials ``p_i`` and factors ``theta_ij < 1`` each gain is
    ``c_ij s`` with ``c_ij = theta_ij p_i / p_j`` (cycle products are
    products of the ``theta``), optionally bent into
    ``c_ij min{s, t + k (s - t)}`` with ``k < 1`` which only lowers it.
    """
    l = int(rng.integers(1, 5)) if l is None else l
    p = rng.uniform(0.2, 5.0, size=l)
    gains = []
    for i in range(l):
        row = []
        for j in range(l):
            if rng.random() >= density:
                row.append(None)
                continue
            theta = float(rng.uniform(0.05, 0.99))
            g = kfun.linear(theta * p[i] / p[j])
            if nonlinear and rng.random() < 0.5:
                t = float(rng.uniform(0.05, 3.0))
                k = float(rng.uniform(0.1, 0.9))
                g = kfun.compose(g, kfun.from_points([0.0, t], [0.0, t], k))
            row.append(g)
        gains.append(row)
    return GainNetwork.from_matrix(gains, [kfun.identity()] * l, M=1)
