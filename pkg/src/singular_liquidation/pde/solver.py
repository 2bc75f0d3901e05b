"""Monotone finite-difference solver for the truncated value equation.

Each backward step from ``t_{i+1}`` to ``t_i`` is a Lie splitting:

1. reaction: ``-u' = F(t, y, u)`` node by node, with semi-implicit
   sub-steps ``u <- (u + h lam) / (1 + h (u/eta + sum_k mu_k u/(gamma_k + u)))``;
2. transport: an implicit step of ``1/2 tr(a D^2) + b.D`` with upwind first
   derivatives and a sign-adapted cross stencil, giving an M-matrix.

Both maps are order preserving and keep nonnegative data nonnegative, so
comparison in ``N`` carries over to the discrete surfaces. Boundary nodes
only see the reaction step (frozen-coefficient ODE).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from ..errors import ConfigError, NumericalError, SchemeFault
from ..model import ProblemSpec
from ..sentinels import LIMIT, is_inf
from .grid import Grid
from .surface import ValueSurface

log = logging.getLogger(__name__)

SCHEME_VERSION = "lie-split-1"


def _node_coeffs(spec: ProblemSpec, t: float, pts: np.ndarray):
    eta = spec.eta_at(t, pts)
    lam = spec.lam_at(t, pts)
    gammas = spec.gammas_at(t, pts)
    return eta, lam, gammas


def _absorption(u, eta, intensities, gammas):
    """``u/eta + sum_k mu_k u/(gamma_k + u)`` (the effective decay rate at ``u``)."""
    a = u / eta
    for mu, g in zip(intensities, gammas):
        if is_inf(g):
            continue
        den = g + u
        a = a + mu * np.divide(u, den, out=np.ones_like(a), where=den > 0)
    return a


def _reaction_step(spec: ProblemSpec, u, t_hi: float, t_lo: float, pts, n_sub: int):
    """Advance ``-u' = F(u)`` from ``t_hi`` down to ``t_lo``; returns ``(u, substeps_used)``."""
    h_total = t_hi - t_lo
    mus = spec.intensities
    # order preservation of the sub-step map needs h^2 lam (1/eta + sum mu/gamma) < 1
    eta, lam, gammas = _node_coeffs(spec, t_lo, pts)
    stiff = 1.0 / eta
    for mu, g in zip(mus, gammas):
        if not is_inf(g):
            stiff = stiff + mu * np.divide(1.0, g, out=np.zeros_like(stiff), where=g > 0)
    bound = float(np.max(lam * stiff))
    n = n_sub
    if bound > 0:
        n = max(n, int(math.ceil(h_total * math.sqrt(bound) * 1.01)) + 1)
    h = h_total / n
    for k in range(1, n + 1):
        t = t_hi - k * h
        if not spec.is_homogeneous:
            eta, lam, gammas = _node_coeffs(spec, t, pts)
        u = (u + h * lam) / (1.0 + h * _absorption(u, eta, mus, gammas))
    return u, n


@dataclass
class _Transport:
    """Implicit transport operator ``I - h L`` at a fixed time, restricted to interior nodes."""

    grid: Grid
    interior: np.ndarray  # flat indices
    shape: tuple[int, ...]
    m_matrix: bool = True

    @classmethod
    def interior_of(cls, grid: Grid) -> "_Transport":
        shape = grid.shape
        mask = np.zeros(shape, dtype=bool)
        mask[tuple(slice(1, -1) for _ in shape)] = True
        return cls(grid, np.flatnonzero(mask.ravel()), shape)

    def generator(self, spec: ProblemSpec, t: float):
        """Sparse ``L`` on the full node set (boundary rows are zero)."""
        grid = self.grid
        pts = grid.points.reshape(-1, grid.dim)[self.interior]
        a = spec.diffusion(t, pts)
        b = spec.b(t, pts)
        hs = grid.spacing
        strides = np.cumprod((1,) + self.shape[::-1])[:-1][::-1]
        rows, cols, vals = [], [], []
        idx = self.interior
        d = grid.dim
        for e in range(d):
            cross = np.zeros(len(idx))
            for j in range(d):
                if j != e:
                    cross += np.abs(a[:, e, j]) / (2.0 * hs[e] * hs[j])
            base = a[:, e, e] / (2.0 * hs[e] ** 2) - cross
            up = base + np.maximum(b[:, e], 0.0) / hs[e]
            dn = base + np.maximum(-b[:, e], 0.0) / hs[e]
            for off, w in ((strides[e], up), (-strides[e], dn)):
                rows.append(idx)
                cols.append(idx + off)
                vals.append(w)
        for e in range(d):
            for j in range(e + 1, d):
                aij = a[:, e, j]
                if not np.any(aij):
                    continue
                w = 1.0 / (2.0 * hs[e] * hs[j])
                pos, neg = np.maximum(aij, 0.0) * w, np.maximum(-aij, 0.0) * w
                se, sj = strides[e], strides[j]
                for off, wv in ((se + sj, pos), (-se - sj, pos), (se - sj, neg), (-se + sj, neg)):
                    rows.append(idx)
                    cols.append(idx + off)
                    vals.append(wv)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        n = int(np.prod(self.shape))
        off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        if np.any(vals < -1e-14):
            self.m_matrix = False
        diag = -np.asarray(off.sum(axis=1)).ravel()
        return off + sp.diags(diag)

    def solve(self, spec: ProblemSpec, t: float, h: float, rhs: np.ndarray) -> np.ndarray:
        if self.grid.dim == 1:
            return self._solve_1d(spec, t, h, rhs)
        L = self.generator(spec, t)
        A = (sp.identity(L.shape[0], format="csc") - h * L).tocsc()
        return splu(A).solve(rhs)

    def _solve_1d(self, spec, t, h, rhs):
        grid = self.grid
        y = grid.axes[0][1:-1, None]
        a = spec.diffusion(t, y)[:, 0, 0]
        b = spec.b(t, y)[:, 0]
        dy = grid.spacing[0]
        up = a / (2 * dy * dy) + np.maximum(b, 0.0) / dy
        dn = a / (2 * dy * dy) + np.maximum(-b, 0.0) / dy
        n = rhs.size
        ab = np.zeros((3, n))
        ab[1] = 1.0
        ab[1, 1:-1] = 1.0 + h * (up + dn)
        ab[0, 2:] = -h * up
        ab[2, :-2] = -h * dn
        return solve_banded((1, 1), ab, rhs)


def surface_gradient(values: np.ndarray, axes: Sequence[np.ndarray]) -> np.ndarray:
    """Central-difference ``Du`` on every time slice, shape ``values.shape + (d,)``."""
    d = len(axes)
    if d == 1:
        g = [np.gradient(values, axes[0], axis=1)]
    else:
        g = np.gradient(values, *axes, axis=tuple(range(1, d + 1)))
    return np.stack(g, axis=-1)


def solve_truncated(spec: ProblemSpec, grid: Grid, N: float) -> ValueSurface:
    """Solve the truncated equation with terminal value ``N`` on ``grid``.

    Raises :class:`NumericalError` (with the failing time index) on a
    non-finite value. Negative values can only come from round-off; they are
    clamped to zero and counted in ``meta['clamped']``.
    """
    if is_inf(N) or not N >= 0:
        raise ConfigError("solve_truncated needs a finite N >= 0; use solve_singular for the limit")
    if grid.dim != spec.dim:
        raise ConfigError(f"grid dimension {grid.dim} differs from spec dimension {spec.dim}")
    if not math.isclose(grid.horizon, spec.horizon, rel_tol=1e-12):
        raise ConfigError("grid horizon differs from the spec horizon")
    pts = grid.points.reshape(-1, grid.dim)
    transport = _Transport.interior_of(grid)
    n_t = len(grid.times)
    values = np.empty((n_t, pts.shape[0]))
    values[-1] = float(N)
    u = values[-1].copy()
    clamped = 0
    max_sub = grid.reaction_substeps
    no_transport = _trivial_transport(spec, grid)
    for i in range(n_t - 2, -1, -1):
        t_hi, t_lo = float(grid.times[i + 1]), float(grid.times[i])
        u, used = _reaction_step(spec, u, t_hi, t_lo, pts, grid.reaction_substeps)
        max_sub = max(max_sub, used)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite value at time index {i} (t={t_lo})", time_index=i, time=t_lo)
        if not no_transport:
            try:
                u = transport.solve(spec, t_lo, t_hi - t_lo, u)
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                raise NumericalError(f"transport solve failed at time index {i} (t={t_lo}): {exc}",
                                     time_index=i, time=t_lo) from exc
        neg = u < 0
        if np.any(neg):
            clamped += int(np.count_nonzero(neg))
            u = np.where(neg, 0.0, u)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite value at time index {i} (t={t_lo})", time_index=i, time=t_lo)
        values[i] = u
    if clamped:
        log.info("clamped %d negative round-off values (N=%g)", clamped, N)
    values = values.reshape((n_t,) + grid.shape)
    meta = {"N": float(N), "clamped": clamped, "max_substeps": max_sub, "m_matrix": transport.m_matrix,
            "scheme": SCHEME_VERSION, "grid_hash": grid.content_hash(), "spec_hash": spec.content_hash(),
            "cutoff": grid.cutoff, "horizon": grid.horizon}
    return ValueSurface(grid.times, grid.axes, values, surface_gradient(values, grid.axes), float(N), meta)


def _trivial_transport(spec: ProblemSpec, grid: Grid) -> bool:
    """True when drift and volatility vanish identically (checked on the grid)."""
    pts = grid.points.reshape(-1, grid.dim)
    for t in (grid.times[0], grid.times[len(grid.times) // 2], grid.times[-1]):
        if np.any(spec.b(t, pts)) or np.any(spec.sigma(t, pts)):
            return False
    return all(c.is_constant for c in spec.drift) and all(c.is_constant for row in spec.vol for c in row)


@dataclass
class SingularSolution:
    """Limit surface on ``[0, T - cutoff]`` plus convergence evidence from the ``N`` sweep."""

    surface: ValueSurface
    surfaces: dict[float, ValueSurface]
    schedule: tuple[float, ...]
    gap: float
    monotone_margin: float
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self):
        return {"schedule": list(self.schedule), "gap": self.gap,
                "monotone_margin": self.monotone_margin, **self.details}


def check_schedule(spec: ProblemSpec, grid: Grid, schedule: Sequence[float]) -> tuple[float, ...]:
    sched = tuple(float(n) for n in schedule)
    if len(sched) < 2:
        raise ConfigError("N schedule needs at least two levels")
    if any(b <= a for a, b in zip(sched, sched[1:])):
        raise ConfigError(f"N schedule must be strictly increasing: {sched}")
    need = spec.Lambda * math.exp(2.0 * spec.horizon) / grid.cutoff
    if sched[-1] < need:
        raise ConfigError(f"largest N={sched[-1]:g} is below Lambda exp(2T)/cutoff = {need:g}")
    return sched


def solve_singular(spec: ProblemSpec, grid: Grid, schedule: Sequence[float], *, workers: int = 1,
                   solver=None, atol_rel: float = 1e-8) -> SingularSolution:
    """Sweep ``N`` up the schedule and take the last surface (restricted to ``t <= T - cutoff``) as the limit.

    Consecutive surfaces must satisfy ``u^{N_k} >= u^{N_{k-1}}`` up to
    ``atol_rel * N_k``; a violation raises :class:`SchemeFault`.
    """
    sched = check_schedule(spec, grid, schedule)
    solve = solver or (lambda n: solve_truncated(spec, grid, n))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            surfaces = list(pool.map(solve, sched))
    else:
        surfaces = [solve(n) for n in sched]
    margin = math.inf
    for (n0, s0), (n1, s1) in zip(zip(sched, surfaces), zip(sched[1:], surfaces[1:])):
        diff = s1.values - s0.values
        m = float(diff.min())
        margin = min(margin, m / n1)
        if m < -atol_rel * n1:
            k = np.unravel_index(int(np.argmin(diff)), diff.shape)
            raise SchemeFault(f"discrete surfaces not monotone in N between N={n0:g} and N={n1:g}: "
                              f"min difference {m:.3e} at time index {k[0]}", time_index=int(k[0]),
                              time=float(grid.times[k[0]]))
    t_cut = float(grid.times[grid.cutoff_index])
    last, prev = surfaces[-1].restrict(t_cut), surfaces[-2].restrict(t_cut)
    gap = float(np.max((last.values - prev.values) / np.maximum(last.values, 1e-300)))
    limit = last.with_truncation(LIMIT, N_last=sched[-1], gap=gap, t_cut=t_cut)
    return SingularSolution(limit, dict(zip(sched, surfaces)), sched, gap, margin,
                            {"t_cut": t_cut})
