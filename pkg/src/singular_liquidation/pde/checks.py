"""Bound and comparison checks on solved surfaces."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from ..errors import DomainError, InputError
from ..model import ProblemSpec
from ..reports import CheckReport
from ..riccati import growth_constants, sandwich_envelope
from ..sentinels import is_inf
from .grid import Grid
from .solver import solve_truncated
from .surface import ValueSurface


def _node(surface: ValueSurface, flat: int) -> dict:
    idx = np.unravel_index(flat, surface.values.shape)
    y = [float(surface.axes[k][idx[k + 1]]) for k in range(surface.dim)]
    return {"t": float(surface.times[idx[0]]), "y": y, "time_index": int(idx[0])}


def check_sandwich(surface: ValueSurface, spec: ProblemSpec, tol: float = 1e-2) -> CheckReport:
    """``lower (1 - tol) <= u^N <= upper (1 + tol)`` at every node, both envelopes explicit in ``N``."""
    if surface.is_limit:
        raise DomainError("check_sandwich needs a finite-N surface")
    N = float(surface.truncation)
    lower, upper = sandwich_envelope(spec, N, surface.times)
    shape = (-1,) + (1,) * surface.dim
    lo = np.asarray(lower, float).reshape(shape)
    hi = np.asarray(upper, float).reshape(shape)
    u = surface.values
    slack_lo = (lo - u) / lo  # > tol is a violation
    slack_hi = (u - hi) / hi
    worst = np.maximum(slack_lo, slack_hi)
    k = int(np.argmax(worst))
    obs = float(worst.flat[k])
    return CheckReport(f"sandwich N={N:g}", obs <= tol, obs, tol, _node(surface, k),
                       {"N": N, "max_lower_excess": float(slack_lo.max()),
                        "max_upper_excess": float(slack_hi.max())})


def check_monotone_in_N(surfaces: dict[float, ValueSurface], atol_rel: float = 1e-8) -> CheckReport:
    """``u^{N2} >= u^{N1} - atol_rel * N2`` for every pair ``N1 < N2``."""
    levels = sorted(surfaces)
    worst, where = math.inf, {}
    for i, n1 in enumerate(levels):
        for n2 in levels[i + 1:]:
            diff = (surfaces[n2].values - surfaces[n1].values) / n2
            k = int(np.argmin(diff))
            if diff.flat[k] < worst:
                worst = float(diff.flat[k])
                where = {**_node(surfaces[n2], k), "N1": n1, "N2": n2}
    if not levels[1:]:
        worst = 0.0
    return CheckReport("monotone in N", worst >= -atol_rel, worst, -atol_rel, where,
                       {"levels": levels})


def check_growth(surface: ValueSurface, spec: ProblemSpec, horizon: float | None = None,
                 cutoff: float | None = None, rel_tol: float = 0.0) -> CheckReport:
    """``c0/(T - t) <= u <= c1/(T - t)`` at nodes with ``t <= T - cutoff``."""
    T = horizon if horizon is not None else surface.meta.get("horizon", spec.horizon)
    eps = cutoff if cutoff is not None else surface.meta.get("cutoff", 0.01 * T)
    keep = surface.times <= T - eps + 1e-12 * T
    t = surface.times[keep]
    u = surface.values[keep]
    c0, c1 = growth_constants(spec)
    s = (T - t).reshape((-1,) + (1,) * surface.dim)
    scaled = u * s
    lo_ex = (c0 - scaled) / c0
    hi_ex = (scaled - c1) / c1
    worst = np.maximum(lo_ex, hi_ex)
    k = int(np.argmax(worst))
    obs = float(worst.flat[k])
    return CheckReport("growth envelope", obs <= rel_tol, obs, rel_tol, _node(surface, k),
                       {"c0": c0, "c1": c1, "min_scaled": float(scaled.min()),
                        "max_scaled": float(scaled.max())})


def _dominated(spec_a: ProblemSpec, spec_b: ProblemSpec, grid: Grid) -> list[dict]:
    """Nodes where B fails to dominate A in (lambda, gamma, eta)."""
    bad = []
    pts = grid.points.reshape(-1, grid.dim)
    for t in grid.times:
        checks = [("lambda", spec_a.lam_at(t, pts), spec_b.lam_at(t, pts)),
                  ("eta", spec_a.eta_at(t, pts), spec_b.eta_at(t, pts))]
        for k, (ga, gb) in enumerate(zip(spec_a.gammas_at(t, pts), spec_b.gammas_at(t, pts))):
            if is_inf(gb):
                continue
            if is_inf(ga):
                bad.append({"coefficient": f"gamma[{k}]", "t": float(t), "y": pts[0].tolist()})
                continue
            checks.append((f"gamma[{k}]", ga, gb))
        for name, a, b in checks:
            off = np.flatnonzero(b < a - 1e-14)
            for j in off[:5]:
                bad.append({"coefficient": name, "t": float(t), "y": pts[j].tolist(),
                            "A": float(a[j]), "B": float(b[j])})
    return bad


def compare_coefficients(spec_a: ProblemSpec, spec_b: ProblemSpec, grid: Grid, N: float, *,
                         tol: float = 1e-6, mode: str = "geq",
                         solver: Callable[[ProblemSpec, float], ValueSurface] | None = None,
                         ) -> CheckReport:
    """Solve both specs; B dominating A in (lambda, gamma, eta) must give ``u_B >= u_A - tol``.

    ``mode="leq"`` is the mirrored statement: A dominates B and ``u_B <= u_A + tol``.
    """
    if mode not in ("geq", "leq"):
        raise InputError(f"mode must be 'geq' or 'leq', got {mode!r}")
    if (spec_a.drift, spec_a.vol, tuple(spec_a.intensities)) != (spec_b.drift, spec_b.vol,
                                                                tuple(spec_b.intensities)):
        raise InputError("compared specs must share drift, volatility and jump intensities")
    lo, hi = (spec_a, spec_b) if mode == "geq" else (spec_b, spec_a)
    bad = _dominated(lo, hi, grid)
    if bad:
        raise InputError(f"domination precondition fails at {len(bad)} node(s), e.g. {bad[:3]}")
    solve = solver or (lambda s, n: solve_truncated(s, grid, n))
    ua, ub = solve(spec_a, N), solve(spec_b, N)
    diff = ub.values - ua.values if mode == "geq" else ua.values - ub.values
    k = int(np.argmin(diff))
    obs = float(diff.flat[k])
    return CheckReport(f"comparison ({mode}) N={N:g}", obs >= -tol, obs, -tol, _node(ua, k),
                       {"max_gap": float(diff.max())})


def check_shifted_upper_bound(surface: ValueSurface, Lambda: float, deltas: Sequence[float], *,
                              horizon: float | None = None, cutoff: float | None = None,
                              tol: float = 1e-6) -> CheckReport:
    """``u(t, y) <= Lambda e^{2T}/(T - delta - t) + tol`` for ``t <= T - cutoff - delta``.

    Also confirms that the bound shrinks as ``delta`` decreases.
    """
    T = horizon if horizon is not None else surface.meta["horizon"]
    eps = cutoff if cutoff is not None else surface.meta["cutoff"]
    deltas = sorted(float(d) for d in deltas)
    if not deltas or deltas[0] <= 0 or deltas[-1] >= eps:
        raise DomainError(f"deltas must lie in (0, cutoff={eps})")
    c1 = Lambda * math.exp(2.0 * T)
    per, worst, where = {}, -math.inf, {}
    prev = None
    tightens = True
    for d in deltas:
        keep = surface.times <= T - eps - d + 1e-12 * T
        if not np.any(keep):
            raise DomainError(f"no knots with t <= T - cutoff - delta for delta={d}")
        t = surface.times[keep]
        bound = (c1 / (T - d - t)).reshape((-1,) + (1,) * surface.dim)
        excess = surface.values[keep] - bound
        k = int(np.argmax(excess))
        per[d] = float(excess.flat[k])
        if per[d] > worst:
            worst, where = per[d], {**_node(surface, k), "delta": d}
        # larger delta gives a larger bound at every common knot
        if prev is not None:
            common = min(len(prev), len(t))
            tightens &= bool(np.all(prev[:common] <= c1 / (T - d - t[:common]) + 1e-300))
        prev = c1 / (T - d - t)
    return CheckReport("shifted upper bound", worst <= tol and tightens, worst, tol, where,
                       {"per_delta": per, "tightens_as_delta_decreases": tightens, "Lambda": Lambda})
