"""Result record shared by the graph checks and the sampled checkers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["CheckReport"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if np.isnan(f):
            return None
        if np.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


@dataclass(frozen=True)
class CheckReport:
    """Outcome of a check.

    Attributes
    ----------
    verdict : bool
        True when no violation was found.
    samples : int
        Number of points (samples, grid points or cycles) examined.
    worst_margin : float
        Smallest slack ``rhs - lhs`` seen; negative means violated.
    witness : dict or None
        Data reproducing the worst violation.  Always present when the
        verdict is false.
    details : dict
        Check-specific extras such as the sampled region.
    """

    verdict: bool
    samples: int
    worst_margin: float
    witness: dict | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.verdict and self.witness is None:
            raise ValueError("a failed check must carry a witness")

    def __bool__(self):
        return bool(self.verdict)

    def to_dict(self) -> dict:
        return _jsonable({
            "verdict": bool(self.verdict),
            "samples": int(self.samples),
            "worst_margin": self.worst_margin,
            "witness": self.witness,
            "details": self.details,
        })

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)
