"""Gain digraphs: cycle enumeration, the cyclic small-gain test and scalings.

A :class:`GainNetwork` stores the interconnection gains ``gains[i][j]``
(influence of block ``j`` on block ``i``), the input gains and the
finite-step horizon ``M``.  Node indices are 0-based throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np

from . import kfun
from .kfun import Kind, PLFunction
from .report import CheckReport

__all__ = [
    "GainNetwork", "SigmaScaling", "MarginExhausted", "DEFAULT_EPSILONS",
    "simple_cycles", "cycle_gain", "check_small_gain", "inflate", "construct_sigma",
    "scaled_gain_margin",
]

# inflation factors tried in order by construct_sigma
DEFAULT_EPSILONS = (0.1, 0.05, 0.01, 1e-3, 1e-4, 1e-5, 1e-6)


class MarginExhausted(RuntimeError):
    pass


def _pl(g) -> PLFunction:
    if g is None:
        return kfun.zero()
    if isinstance(g, PLFunction):
        return g
    return PLFunction.from_dict(g)


@dataclass(frozen=True, eq=False)
class GainNetwork:
    """Interconnection gains of ``l`` subsystems with horizon ``M``."""

    l: int
    gains: tuple
    input_gains: tuple
    M: int = 1

    def __post_init__(self):
        gains = tuple(tuple(_pl(g) for g in row) for row in self.gains)
        if len(gains) != self.l or any(len(row) != self.l for row in gains):
            raise ValueError(f"gain matrix must be {self.l}x{self.l}")
        inputs = tuple(_pl(g) for g in self.input_gains)
        if len(inputs) != self.l:
            raise ValueError(f"expected {self.l} input gains")
        for i, row in enumerate(gains):
            for j, g in enumerate(row):
                if g.kind is Kind.K:
                    raise ValueError(f"gain ({i}, {j}) must be K-infinity or zero")
        if self.M < 1:
            raise ValueError("horizon M must be positive")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "input_gains", inputs)

    @classmethod
    def from_matrix(cls, gains: Sequence[Sequence], input_gains: Sequence | None = None,
                    M: int = 1) -> "GainNetwork":
        l = len(gains)
        if input_gains is None:
            input_gains = [None] * l
        return cls(l, tuple(tuple(r) for r in gains), tuple(input_gains), M)

    def edges(self):
        """Yield ``(i, j, gain)`` for every nonzero gain."""
        for i, row in enumerate(self.gains):
            for j, g in enumerate(row):
                if not g.is_zero:
                    yield i, j, g

    def digraph(self) -> nx.DiGraph:
        G = nx.DiGraph()
        G.add_nodes_from(range(self.l))
        G.add_edges_from((i, j) for i, j, _ in self.edges())
        return G

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "M": self.M,
            "gains": [[None if g.is_zero else g.to_dict() for g in row] for row in self.gains],
            "input_gains": [None if g.is_zero else g.to_dict() for g in self.input_gains],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GainNetwork":
        return cls(int(data["l"]), tuple(tuple(r) for r in data["gains"]),
                   tuple(data.get("input_gains") or [None] * int(data["l"])), int(data.get("M", 1)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _canonical(cycle: Sequence[int]) -> tuple[int, ...]:
    k = int(np.argmin(cycle))
    return tuple(cycle[k:]) + tuple(cycle[:k])


def simple_cycles(net: GainNetwork) -> list[tuple[int, ...]]:
    """All simple cycles of the nonzero-gain digraph, smallest node first.

    A cycle ``(i1, ..., ir)`` stands for the edges ``i1 -> i2 -> ... -> i1``
    in the direction gains are composed: the edge ``i -> j`` exists when
    ``gains[i][j]`` is nonzero.  Self-loops appear as 1-tuples.
    """
    cycles = {_canonical(c) for c in nx.simple_cycles(net.digraph())}
    return sorted(cycles, key=lambda c: (len(c), c))


def cycle_gain(net: GainNetwork, cycle: Sequence[int]) -> PLFunction:
    """``gains[i1][i2] o gains[i2][i3] o ... o gains[ir][i1]``."""
    out = kfun.identity()
    r = len(cycle)
    for a in range(r):
        out = kfun.compose(out, net.gains[cycle[a]][cycle[(a + 1) % r]])
    return out


def check_small_gain(net: GainNetwork, s_max: float = 10.0, grid: int = 512,
                     tol: float = 1e-9) -> CheckReport:
    """Check that every cycle gain lies strictly below the identity.

    Sequences with repeated indices factor through simple cycles, so only
    simple cycles (in one canonical rotation) are tested.
    """
    rows = []
    worst = (np.inf, None, None)
    for c in simple_cycles(net):
        res = kfun.below_identity(cycle_gain(net, c), s_max, grid, tol)
        rows.append({"cycle": list(c), "verdict": res.verdict,
                     "margin": res.worst_margin, "worst_s": res.worst_s})
        if res.worst_margin < worst[0]:
            worst = (res.worst_margin, c, res.worst_s)
    verdict = all(r["verdict"] for r in rows)
    witness = None
    if not verdict:
        witness = {"cycle": list(worst[1]), "s": worst[2], "margin": worst[0]}
    margin = 1.0 if worst[1] is None else worst[0]
    return CheckReport(verdict, len(rows), margin, witness,
                       {"cycles": rows, "s_max": s_max, "grid": grid, "tol": tol})


def inflate(net: GainNetwork, eps: float) -> GainNetwork:
    """Multiply every interconnection gain by ``1 + eps``."""
    if eps < 0:
        raise ValueError("inflation must be nonnegative")
    if eps == 0:
        return net
    gains = tuple(tuple(g if g.is_zero else kfun.scale(g, 1.0 + eps) for g in row)
                  for row in net.gains)
    return GainNetwork(net.l, gains, net.input_gains, net.M)


@dataclass(frozen=True, eq=False)
class SigmaScaling:
    """Scalings with ``gains[i][j](sigma[j](s)) < sigma[i](s)`` on the check range.

    Attributes
    ----------
    sigma : tuple of PLFunction
    margin : float
        Smallest relative slack ``1 - gains[i][j](sigma[j](s)) / sigma[i](s)``.
    alpha_margin : float
        Below-identity margin of the worst scaled gain
        ``sigma[i]^-1 o gains[i][j] o sigma[j]``.
    eps : float
        Inflation used to build the scalings.
    """

    sigma: tuple
    margin: float
    alpha_margin: float
    eps: float
    details: dict = field(default_factory=dict)

    def scaled_gain(self, net: GainNetwork, i: int, j: int) -> PLFunction:
        return kfun.compose(kfun.inverse(self.sigma[i]),
                            kfun.compose(net.gains[i][j], self.sigma[j]))

    def to_dict(self) -> dict:
        return {"sigma": [s.to_dict() for s in self.sigma], "margin": self.margin,
                "alpha_margin": self.alpha_margin, "eps": self.eps}


def _path_max(net: GainNetwork) -> list[PLFunction]:
    """Max over simple paths starting at each node of the composed gains."""
    adj = [[j for j in range(net.l) if not net.gains[i][j].is_zero] for i in range(net.l)]
    out = []
    for start in range(net.l):
        best = kfun.identity()
        stack = [(start, kfun.identity(), frozenset([start]))]
        while stack:
            node, f, seen = stack.pop()
            for nxt in adj[node]:
                if nxt in seen:
                    continue
                h = kfun.compose(f, net.gains[node][nxt])
                best = kfun.pointwise_max(best, h)
                stack.append((nxt, h, seen | {nxt}))
        out.append(best)
    return out


def scaled_gain_margin(net: GainNetwork, sigma: Sequence[PLFunction], s_max: float = 10.0,
                       grid: int = 512) -> tuple[float, dict]:
    """Smallest relative slack ``1 - gains[i][j](sigma[j](s)) / sigma[i](s)``.

    Both sides are PL, so on each common linear piece the ratio is
    monotone; checking the union of breakpoints and grid points in
    ``(0, s_max]`` together with the tail slopes is exact on that range
    and beyond it.
    """
    worst, where = np.inf, {}
    base = kfun.check_grid(s_max, grid)
    for i, j, g in net.edges():
        lhs = kfun.compose(g, sigma[j])
        rhs = sigma[i]
        pts = np.union1d(base, np.concatenate([lhs.s, rhs.s]))
        pts = pts[(pts > 0) & (pts <= s_max)]
        m = 1.0 - kfun.evaluate(lhs, pts) / kfun.evaluate(rhs, pts)
        k = int(np.argmin(m))
        cand = [(float(m[k]), float(pts[k]))]
        cand.append((1.0 - lhs.tail_slope / rhs.tail_slope, float("inf")))
        for val, s in cand:
            if val < worst:
                worst, where = val, {"edge": [i, j], "s": s}
    if not where:
        worst = 1.0
    return float(worst), where


def construct_sigma(net: GainNetwork, eps: float | None = None, s_max: float = 10.0,
                    grid: int = 512, tol: float = 1e-9) -> SigmaScaling:
    """Scalings from the max over simple paths of inflated gains.

    ``sigma[i]`` is the pointwise max, over simple paths
    ``i -> j1 -> ... -> jk`` (the empty path included), of
    ``(1+eps) gains[i][j1] o ... o (1+eps) gains[j(k-1)][jk]``.
    When the inflated cycles lie below the identity this gives
    ``(1+eps) gains[i][j] o sigma[j] <= sigma[i]``, hence a strict decrease
    for the original gains.  The resulting inequality is verified directly
    on the original gains, and `eps` is backed off through
    :data:`DEFAULT_EPSILONS` when it is not given.

    Raises
    ------
    MarginExhausted
        If no inflation yields valid scalings.
    """
    tries = DEFAULT_EPSILONS if eps is None else (eps,)
    log = []
    for e in tries:
        big = inflate(net, e)
        inflated_ok = check_small_gain(big, s_max, grid, 0.0).verdict
        sigma = tuple(_path_max(big))
        margin, where = scaled_gain_margin(net, sigma, s_max, grid)
        alpha_margin = 1.0
        for i, j, g in net.edges():
            h = kfun.compose(kfun.inverse(sigma[i]), kfun.compose(g, sigma[j]))
            alpha_margin = min(alpha_margin, kfun.below_identity(h, s_max, grid, tol).worst_margin)
        log.append({"eps": e, "inflated_cycles_pass": inflated_ok,
                    "margin": margin, "alpha_margin": alpha_margin})
        if margin > 0 and alpha_margin >= tol:
            return SigmaScaling(sigma, margin, alpha_margin, e,
                                {"attempts": log, "worst": where})
    raise MarginExhausted(f"no inflation in {list(tries)} gives valid scalings: {log}")
