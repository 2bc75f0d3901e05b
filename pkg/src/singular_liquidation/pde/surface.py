"""Immutable value surfaces ``u(t_i, y_j)`` with their gradients."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..errors import DomainError
from ..sentinels import is_inf


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """Solution on ``times x axes``; ``values`` is ``(n_t, *shape)``, ``gradient`` adds a trailing ``d``.

    ``truncation`` is the terminal level ``N`` or ``LIMIT`` for the singular limit.
    """

    times: np.ndarray
    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    gradient: np.ndarray
    truncation: Any
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times))
        object.__setattr__(self, "axes", tuple(_frozen(a) for a in self.axes))
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "gradient", _frozen(self.gradient))
        shape = (len(self.times),) + tuple(len(a) for a in self.axes)
        if self.values.shape != shape or self.gradient.shape != shape + (len(self.axes),):
            raise ValueError(f"surface arrays do not match the grid shape {shape}")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def is_limit(self) -> bool:
        return is_inf(self.truncation)

    @cached_property
    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @cached_property
    def _interp_u(self):
        return RegularGridInterpolator((self.times, *self.axes), self.values, bounds_error=False,
                                       fill_value=None)

    @cached_property
    def _interp_du(self):
        return RegularGridInterpolator((self.times, *self.axes), self.gradient, bounds_error=False,
                                       fill_value=None)

    def _query(self, t, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 0 or y.shape[-1] != self.dim:
            y = y[..., None]
        t = np.broadcast_to(np.asarray(t, dtype=float), y.shape[:-1])
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise DomainError(f"t outside the solved range [{self.times[0]}, {self.times[-1]}]")
        return np.concatenate([t[..., None], y], axis=-1)

    def value(self, t, y) -> np.ndarray:
        """Multilinear interpolation in ``(t, y)``; ``y`` has shape ``(..., d)``."""
        return self._interp_u(self._query(t, y))

    def grad(self, t, y) -> np.ndarray:
        return self._interp_du(self._query(t, y))

    def restrict(self, t_max: float) -> "ValueSurface":
        """Keep the knots with ``t <= t_max``."""
        keep = self.times <= t_max + 1e-12 * max(1.0, abs(t_max))
        return ValueSurface(self.times[keep], self.axes, self.values[keep], self.gradient[keep],
                            self.truncation, dict(self.meta))

    def with_truncation(self, truncation, **meta) -> "ValueSurface":
        return ValueSurface(self.times, self.axes, self.values, self.gradient, truncation,
                            {**self.meta, **meta})

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for a in (self.times, *self.axes, self.values, self.gradient):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr("inf" if self.is_limit else float(self.truncation)).encode())
        return h.hexdigest()
