"""Time-weighted gradient transform ``Q^N`` and its discrete Sobolev norms.

``Q^N(t, y) = (kappa1/N + delta_N (T - t))^alpha2 * theta(y) * u^N(t, y)``
stays bounded in ``H^{1,2}`` and ``H^{1,p1}`` uniformly in ``N`` when the
parameters satisfy ``2 alpha0 = alpha1 alpha2``, ``(2 - alpha2) p1 < 1`` and
``delta_N < alpha1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.integrate import trapezoid

from ..errors import ConfigError, DomainError, InputError
from ..model import ProblemSpec, h3_report, weight_gradient, weight_theta
from ..reports import CheckReport
from .grid import Grid
from .surface import ValueSurface

_P1_STEP = 0.25
_INTERIOR = 0.01  # alpha2 sits this fraction of the way into its admissible interval


@dataclass(frozen=True)
class GradientParams:
    alpha0: float
    alpha1: float
    alpha2: float
    p0: float
    p1: float
    T1: float
    N0: int
    kappa1: float
    mu_total: float
    horizon: float

    def delta(self, N: float) -> float:
        """``(1 + kappa1 mu / N) exp(mu (T - T1))``."""
        return (1.0 + self.kappa1 * self.mu_total / N) * math.exp(self.mu_total * (self.horizon - self.T1))

    def time_factor(self, N: float, t) -> np.ndarray:
        return (self.kappa1 / N + self.delta(N) * (self.horizon - np.asarray(t, float))) ** self.alpha2

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _kappa1(spec: ProblemSpec, grid: Grid | None, T0: float) -> float:
    if grid is None:
        times = np.linspace(T0, spec.horizon, 17)
        pts = np.linspace(-3, 3, 33)[:, None] * np.ones(spec.dim)
    else:
        times = grid.times[grid.times >= T0 - 1e-12]
        pts = grid.points.reshape(-1, grid.dim)
    return float(min(np.min(spec.eta_at(t, pts)) for t in times))


def _sup_eta(spec: ProblemSpec, grid: Grid | None, T0: float) -> float:
    if grid is None:
        times = np.linspace(T0, spec.horizon, 17)
        pts = np.linspace(-3, 3, 33)[:, None] * np.ones(spec.dim)
    else:
        times = grid.times[grid.times >= T0 - 1e-12]
        pts = grid.points.reshape(-1, grid.dim)
    return float(max(np.max(spec.eta_at(t, pts)) for t in times))


def gradient_transform_params(spec: ProblemSpec, p0: float, T1: float, grid: Grid | None = None,
                              T0: float | None = None) -> GradientParams:
    """Deterministic admissible parameter choice.

    For ``p1`` on the lattice ``2, 2.25, ... < p0`` (largest first):
    ``alpha2 = lo + 0.01 (hi - lo)`` with ``lo = 2 - 1/p1``, ``hi = 2 alpha0``,
    and ``alpha1 = 2 alpha0 / alpha2``. The first ``p1`` whose ``alpha1``
    exceeds ``exp(mu (T - T1))`` is taken.
    """
    T = spec.horizon
    T0 = spec.T0 if T0 is None else T0
    if not p0 > 2:
        raise ConfigError(f"p0 must exceed 2 (got {p0})")
    if not T0 <= T1 < T:
        raise ConfigError(f"T1={T1} must lie in [T0, T) = [{T0}, {T})")
    kappa1 = _kappa1(spec, grid, T0)
    h3 = h3_report(T0, kappa1, _sup_eta(spec, grid, T0), p0)
    if not h3.satisfied:
        raise ConfigError(f"eta ratio condition fails for p0={p0} (largest admissible p0 {h3.largest_p0:.4g})")
    alpha0 = 1.0 - 1.0 / (2.0 * p0)
    mu = spec.mu_total
    growth = math.exp(mu * (T - T1))
    lattice = np.arange(2.0, p0, _P1_STEP)[::-1]
    for p1 in lattice:
        lo, hi = 2.0 - 1.0 / p1, 2.0 * alpha0
        alpha2 = lo + _INTERIOR * (hi - lo)
        alpha1 = 2.0 * alpha0 / alpha2
        if alpha1 > growth:
            break
    else:
        raise ConfigError(f"exp(mu (T - T1)) = {growth:.6g} leaves no admissible alpha1; "
                          f"increase T1 (currently {T1})")
    base = int(math.floor(2.0 * spec.Lambda + spec.kappa * mu)) + 1
    if mu > 0:
        need = kappa1 * mu / (alpha1 / growth - 1.0)
        N0 = max(base, int(math.floor(need)) + 1)
    else:
        N0 = base
    params = GradientParams(float(alpha0), float(alpha1), float(alpha2), float(p0), float(p1), float(T1),
                            N0, kappa1, mu, T)
    assert math.isclose(params.alpha1 * params.alpha2, 2 * alpha0, rel_tol=1e-12)
    assert (2.0 - params.alpha2) * params.p1 < 1.0 and params.alpha1 > 1 and params.alpha2 > 1
    assert params.delta(N0) < alpha1
    return params


def _integrate(f: np.ndarray, axes) -> np.ndarray:
    """Trapezoid rule over the trailing spatial axes of ``f`` (leading axis is time)."""
    for ax in reversed(axes):
        f = trapezoid(f, ax, axis=-1)
    return f


def transform(surface: ValueSurface, params: GradientParams, q: float):
    """``(Q, DQ)`` on the surface nodes, with ``DQ`` built from the analytic ``D theta``."""
    if surface.is_limit:
        raise DomainError("the gradient transform is defined for finite N")
    N = float(surface.truncation)
    pts = surface.points
    theta = weight_theta(pts, q)
    dtheta = weight_gradient(pts, q)
    w = params.time_factor(N, surface.times).reshape((-1,) + (1,) * surface.dim)
    Q = w * theta * surface.values
    DQ = w[..., None] * (dtheta * surface.values[..., None] + theta[..., None] * surface.gradient)
    return Q, DQ


def sobolev_norms(Q: np.ndarray, DQ: np.ndarray, axes, p: float) -> np.ndarray:
    """``int |Q|^p + |DQ|^p`` per time slice (the ``p``-th power of the ``H^{1,p}`` norm)."""
    grad_mag = np.sqrt(np.sum(DQ * DQ, axis=-1))
    return _integrate(np.abs(Q) ** p + grad_mag ** p, axes)


@dataclass
class GradientDiagnostics:
    params: GradientParams
    sups: dict[float, float]
    deltas: dict[float, float]
    increase: float
    slack: float
    key_inequality: float
    bounded: bool
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.bounded and self.key_inequality <= 0.0

    def reports(self) -> list[CheckReport]:
        return [
            CheckReport("gradient norms bounded in N", self.bounded, self.increase, self.slack,
                        details={"sups": self.sups, "params": self.params.to_dict()}),
            CheckReport("key monotone inequality", self.key_inequality <= 0.0, self.key_inequality, 0.0,
                        worst=self.details.get("key_worst", {})),
        ]


def gradient_diagnostics(surfaces: dict[float, ValueSurface], params: GradientParams, q: float,
                         spec: ProblemSpec, slack: float = 0.10) -> GradientDiagnostics:
    """Per-``N`` sup over ``t in [T1, T]`` of ``||Q_t||^2_{H^{1,2}} + ||Q_t||^{p1}_{H^{1,p1}}``.

    ``increase`` is ``max_N sup_N / sup_{N_first} - 1``; bounded means it
    stays below ``slack``. ``key_inequality`` is the largest value of
    ``alpha2 delta / (kappa1/N + delta (T - t)) / (2 u/eta) - 1`` over the nodes.
    """
    levels = sorted(surfaces)
    if not levels:
        raise InputError("no surfaces given")
    ref = surfaces[levels[0]]
    for n in levels[1:]:
        s = surfaces[n]
        if not (np.array_equal(s.times, ref.times) and all(np.array_equal(a, b)
                                                           for a, b in zip(s.axes, ref.axes))):
            raise InputError(f"surface N={n:g} is on a different grid")
    small = [n for n in levels if n <= params.N0]
    if small:
        raise DomainError(f"levels {small} do not exceed N0={params.N0}")
    sups, deltas = {}, {}
    key_worst, key_where = -math.inf, {}
    T = params.horizon
    for n in levels:
        s = surfaces[n]
        keep = s.times >= params.T1 - 1e-12
        Q, DQ = transform(s, params, q)
        norm = sobolev_norms(Q[keep], DQ[keep], s.axes, 2.0) + sobolev_norms(Q[keep], DQ[keep], s.axes,
                                                                               params.p1)
        sups[n] = float(norm.max())
        d = params.delta(n)
        deltas[n] = d
        t = s.times[keep].reshape((-1,) + (1,) * s.dim)
        eta = np.stack([spec.eta_at(float(tt), s.points) for tt in s.times[keep]])
        lhs = params.alpha2 * d / (params.kappa1 / n + d * (T - t))
        ratio = lhs / (2.0 * s.values[keep] / eta) - 1.0
        k = int(np.argmax(ratio))
        if ratio.flat[k] > key_worst:
            idx = np.unravel_index(k, ratio.shape)
            key_worst = float(ratio.flat[k])
            key_where = {"N": n, "t": float(s.times[keep][idx[0]]),
                         "y": [float(s.axes[j][idx[j + 1]]) for j in range(s.dim)]}
    first = sups[levels[0]]
    increase = max(v / first for v in sups.values()) - 1.0
    return GradientDiagnostics(params, sups, deltas, increase, slack, key_worst, increase < slack,
                               {"key_worst": key_where})
