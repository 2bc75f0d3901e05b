"""Space-time grids with knots graded toward the singular terminal time."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import ConfigError


def graded_knots(T: float, M: int, grading: float) -> np.ndarray:
    """``t_i = T - T ((M - i)/M)^grading``, ``i = 0..M``."""
    if M < 1 or not T > 0:
        raise ConfigError("need T > 0 and at least one time step")
    if grading < 1:
        raise ConfigError("grading exponent must be >= 1")
    i = np.arange(M + 1, dtype=float)
    t = T - T * ((M - i) / M) ** grading
    t[0], t[-1] = 0.0, T
    return t


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor grid ``[lower, upper]^d`` with ``n_y`` nodes per axis and graded time knots."""

    times: np.ndarray
    axes: tuple[np.ndarray, ...]
    cutoff: float
    grading: float
    reaction_substeps: int = 16

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("time knots must be strictly increasing")
        for ax in self.axes:
            if np.any(np.diff(ax) <= 0):
                raise ConfigError("spatial axes must be strictly increasing")
        if self.reaction_substeps < 1:
            raise ConfigError("reaction_substeps must be >= 1")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, d)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def cutoff_index(self) -> int:
        """Index of the last knot with ``t <= T - cutoff``."""
        T = self.horizon
        tol = 1e-12 * max(T, 1.0)
        return int(np.flatnonzero(self.times <= T - self.cutoff + tol)[-1])

    def to_dict(self):
        return {"times": self.times.tolist(), "axes": [a.tolist() for a in self.axes],
                "cutoff": self.cutoff, "grading": self.grading,
                "reaction_substeps": self.reaction_substeps}

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def same_as(self, other: "Grid") -> bool:
        return (self.times.shape == other.times.shape and np.array_equal(self.times, other.times)
                and len(self.axes) == len(other.axes)
                and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes)))

    def refined(self) -> "Grid":
        """Halve every time step and every spatial width."""
        t = self.times
        times = np.sort(np.concatenate([t, 0.5 * (t[1:] + t[:-1])]))
        axes = tuple(np.linspace(a[0], a[-1], 2 * len(a) - 1) for a in self.axes)
        return Grid(times, axes, self.cutoff, self.grading, self.reaction_substeps)


def build_grid(horizon: float, dim: int = 1, *, box=(-3.0, 3.0), n_y: int = 129, n_t: int = 200,
               grading: float = 2.0, cutoff: float | None = None, insert_cutoff: bool = True,
               reaction_substeps: int = 16) -> Grid:
    """Deterministic graded grid.

    ``box`` is ``(lower, upper)`` shared by all axes or one pair per axis;
    ``cutoff`` defaults to ``0.01 * horizon``. With ``insert_cutoff`` the knot
    ``T - cutoff`` is added so that singular-limit quantities can be read
    exactly there.
    """
    if n_y < 8 or n_t < 8:
        raise ConfigError(f"need n_y >= 8 and n_t >= 8 (got n_y={n_y}, n_t={n_t})")
    if dim < 1 or dim > 3:
        raise ConfigError("the finite-difference solver supports 1 <= dim <= 3")
    pairs = [tuple(box)] * dim if np.ndim(box[0]) == 0 else [tuple(b) for b in box]
    if len(pairs) != dim:
        raise ConfigError("box needs one (lower, upper) pair per axis")
    axes = []
    for lo, hi in pairs:
        if not hi > lo:
            raise ConfigError(f"degenerate box [{lo}, {hi}]")
        axes.append(np.linspace(float(lo), float(hi), n_y))
    cutoff = 0.01 * horizon if cutoff is None else float(cutoff)
    if not 0 < cutoff < horizon:
        raise ConfigError("cutoff must lie in (0, T)")
    times = graded_knots(horizon, n_t, grading)
    if insert_cutoff:
        tc = horizon - cutoff
        if np.min(np.abs(times - tc)) > 1e-12 * horizon:
            times = np.sort(np.append(times, tc))
        else:
            times[np.argmin(np.abs(times - tc))] = tc
    if horizon - times[-2] > cutoff * (1 + 1e-12):
        raise ConfigError("time grading too weak: last step exceeds the cutoff")
    return Grid(times, tuple(axes), cutoff, float(grading), int(reaction_substeps))
