"""Uniform pass/fail record returned by every verification check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if type(value).__name__ == "Infinity":
        return "inf"
    return value


@dataclass
class CheckReport:
    """Outcome of one check: observed value against its tolerance, plus the worst node."""

    name: str
    passed: bool
    observed: float
    tolerance: float | None = None
    worst: dict[str, Any] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return _plain({"name": self.name, "passed": bool(self.passed), "observed": self.observed,
                       "tolerance": self.tolerance, "worst": self.worst, "details": self.details})

    def line(self) -> str:
        tol = "" if self.tolerance is None else f" tol={self.tolerance:.3g}"
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: observed={self.observed:.6g}{tol}"


jsonable = _plain
