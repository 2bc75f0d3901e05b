"""Closed-form coefficient library.

Every coefficient is a smooth (or Lipschitz, when clipped) function of
``(t, y)`` with ``y`` an array of shape ``(..., d)``. The result broadcasts
``t`` against ``y.shape[:-1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from .errors import ConfigError


def _shape(t, y) -> tuple[int, ...]:
    return np.broadcast_shapes(np.shape(t), np.shape(y)[:-1])


class Coefficient:
    kind: ClassVar[str] = ""

    def __call__(self, t, y) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    def check_dim(self, dim: int) -> None:
        pass

    @property
    def is_constant(self) -> bool:
        return False


@dataclass(frozen=True)
class Constant(Coefficient):
    value: float
    kind: ClassVar[str] = "constant"

    def __call__(self, t, y):
        return np.full(_shape(t, y), float(self.value))

    def to_dict(self):
        return {"kind": self.kind, "value": float(self.value)}

    @property
    def is_constant(self) -> bool:
        return True


@dataclass(frozen=True)
class Affine(Coefficient):
    """``offset + <slope, y>``; bounded only on a truncated box."""

    offset: float
    slope: tuple[float, ...]
    kind: ClassVar[str] = "affine"

    def __call__(self, t, y):
        y = np.asarray(y, dtype=float)
        val = self.offset + y @ np.asarray(self.slope, dtype=float)
        return np.broadcast_to(val, _shape(t, y)).copy()

    def to_dict(self):
        return {"kind": self.kind, "offset": float(self.offset), "slope": list(self.slope)}

    def check_dim(self, dim):
        if len(self.slope) != dim:
            raise ConfigError(f"affine slope has length {len(self.slope)}, expected {dim}")

    @property
    def is_constant(self) -> bool:
        return all(s == 0.0 for s in self.slope)


@dataclass(frozen=True)
class Sinusoid(Coefficient):
    """``offset + amplitude * sin(frequency * <direction, y> + phase)``."""

    offset: float
    amplitude: float
    frequency: float = 1.0
    phase: float = 0.0
    direction: tuple[float, ...] | None = None
    kind: ClassVar[str] = "sinusoid"

    def __call__(self, t, y):
        y = np.asarray(y, dtype=float)
        w = np.ones(y.shape[-1]) if self.direction is None else np.asarray(self.direction, float)
        val = self.offset + self.amplitude * np.sin(self.frequency * (y @ w) + self.phase)
        return np.broadcast_to(val, _shape(t, y)).copy()

    def to_dict(self):
        out = {"kind": self.kind, "offset": self.offset, "amplitude": self.amplitude,
               "frequency": self.frequency, "phase": self.phase}
        if self.direction is not None:
            out["direction"] = list(self.direction)
        return out

    def check_dim(self, dim):
        if self.direction is not None and len(self.direction) != dim:
            raise ConfigError(f"sinusoid direction has length {len(self.direction)}, expected {dim}")

    @property
    def is_constant(self) -> bool:
        return self.amplitude == 0.0


@dataclass(frozen=True)
class LogisticRamp(Coefficient):
    """Time ramp ``start + (end - start) / (1 + exp(-rate (t - midpoint)))``."""

    start: float
    end: float
    rate: float
    midpoint: float
    kind: ClassVar[str] = "logistic_ramp"

    def __call__(self, t, y):
        t = np.asarray(t, dtype=float)
        val = self.start + (self.end - self.start) / (1.0 + np.exp(-self.rate * (t - self.midpoint)))
        return np.broadcast_to(val, _shape(t, y)).copy()

    def to_dict(self):
        return {"kind": self.kind, "start": self.start, "end": self.end,
                "rate": self.rate, "midpoint": self.midpoint}

    @property
    def is_constant(self) -> bool:
        return self.start == self.end


@dataclass(frozen=True)
class Clipped(Coefficient):
    inner: Coefficient
    lower: float
    upper: float
    kind: ClassVar[str] = "clipped"

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigError(f"clip interval [{self.lower}, {self.upper}] is empty")

    def __call__(self, t, y):
        return np.clip(self.inner(t, y), self.lower, self.upper)

    def to_dict(self):
        out = self.inner.to_dict()
        out["clip"] = [self.lower, self.upper]
        return out

    def check_dim(self, dim):
        self.inner.check_dim(dim)

    @property
    def is_constant(self) -> bool:
        return self.inner.is_constant or self.lower == self.upper


_KINDS = {cls.kind: cls for cls in (Constant, Affine, Sinusoid, LogisticRamp)}


def coefficient_from_dict(data: Any) -> Coefficient:
    """Build a coefficient from its config mapping; a bare number is a constant."""
    if isinstance(data, Coefficient):
        return data
    if isinstance(data, (int, float)) and not isinstance(data, bool):
        return Constant(float(data))
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError(f"coefficient must be a number or a mapping with 'kind', got {data!r}")
    data = dict(data)
    kind = data.pop("kind")
    clip = data.pop("clip", None)
    if kind not in _KINDS:
        raise ConfigError(f"unknown coefficient kind {kind!r}; known: {sorted(_KINDS)}")
    cls = _KINDS[kind]
    for key in ("slope", "direction"):
        if key in data and data[key] is not None:
            val = data[key]
            data[key] = tuple(float(v) for v in (val if isinstance(val, (list, tuple)) else [val]))
    try:
        coef = cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for coefficient kind {kind!r}: {exc}") from None
    if clip is not None:
        lo, hi = clip
        coef = Clipped(coef, float(lo), float(hi))
    return coef
