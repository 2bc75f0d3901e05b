"""Monte Carlo checks of the value identity, optimality, liquidation and the backward-SDE representation.

Paths are simulated in fixed-size blocks; block ``b`` draws from
``SeedSequence(seed, spawn_key=(b,))``, so results do not depend on how
blocks are spread over workers. Competing policies reuse the same Brownian
increments and jump clocks (common random numbers).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .control import (FeedbackPolicy, Policy, TWAPPolicy, aggregate_increments, block_streams,
                      brownian_increments, dark_pool_off, decay_bound, draw_jumps, scaled,
                      simulate_batch, simulate_factor)
from .errors import AcceptanceError, DomainError, InputError
from .model import ProblemSpec, driver_F
from .pde.surface import ValueSurface
from .reports import CheckReport
from .sentinels import is_inf

log = logging.getLogger(__name__)

BLOCK = 1000
TERMS = ("impact", "risk", "dark", "penalty")
RICHARDSON = 2.0


def _fsum_mean(a: np.ndarray) -> float:
    return math.fsum(a.tolist()) / a.size if a.size else 0.0


@dataclass
class CostEstimate:
    """Sample mean of the path cost with ``stderr = std / sqrt(n_paths)`` and a per-term split."""

    mean: float
    stderr: float
    n_paths: int
    discarded: int
    breakdown: dict[str, float]
    policy: str = ""
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, terms: dict[str, np.ndarray], discarded: int, policy: str = "") -> "CostEstimate":
        total = sum(terms[k] for k in TERMS)
        n = total.size
        mean = _fsum_mean(total)
        var = math.fsum(((total - mean) ** 2).tolist()) / (n - 1) if n > 1 else 0.0
        return cls(mean, math.sqrt(var / n) if n else 0.0, n, discarded,
                   {k: _fsum_mean(terms[k]) for k in TERMS}, policy, total)

    def to_dict(self) -> dict[str, Any]:
        return {"policy": self.policy, "mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "discarded": self.discarded, "breakdown": dict(self.breakdown)}


def _box(surface: ValueSurface) -> list[tuple[float, float]]:
    return [(float(a[0]), float(a[-1])) for a in surface.axes]


def _n_blocks(n_paths: int, block: int) -> list[int]:
    sizes = [block] * (n_paths // block)
    if n_paths % block:
        sizes.append(n_paths % block)
    return sizes


def run_ensemble(spec: ProblemSpec, policies: Sequence[Policy], x0: float, y0, mesh, n_paths: int, *,
                 seed: int = 0, workers: int = 1, box=None, fine_mesh=None, N: float | None = None,
                 block: int = BLOCK) -> dict[str, dict[str, np.ndarray]]:
    """Per-path cost terms for every policy under common random numbers.

    Brownian increments are drawn on ``fine_mesh`` (default ``mesh``) and
    summed onto ``mesh``; jump clocks run on ``[0, T]``. The returned
    ``terms`` include ``x_end`` and the ``exited`` mask.
    """
    mesh = np.asarray(mesh, dtype=float)
    fine = mesh if fine_mesh is None else np.asarray(fine_mesh, dtype=float)
    sizes = _n_blocks(n_paths, block)

    def one(b: int):
        gw, gj = block_streams(seed, b)
        dW = brownian_increments(gw, sizes[b], fine, spec.n_brownian)
        if fine is not mesh:
            dW = aggregate_increments(dW, fine, mesh)
        jumps = draw_jumps(gj, sizes[b], spec.intensities, spec.horizon)
        out = {}
        for pol in policies:
            rec = simulate_batch(spec, pol, x0, y0, mesh, dW=dW, jumps=jumps, box=box, seed=seed)
            pen = (0.0 if N is None else float(N)) * rec.x_end ** 2
            out[pol.name] = {"impact": rec.impact, "risk": rec.risk, "dark": rec.dark,
                             "dark_events": rec.dark_events, "penalty": pen, "x_end": rec.x_end,
                             "exited": rec.exited}
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    else:
        parts = [one(b) for b in range(len(sizes))]
    merged: dict[str, dict[str, np.ndarray]] = {}
    for pol in policies:
        merged[pol.name] = {k: np.concatenate([np.broadcast_to(p[pol.name][k], p[pol.name]["x_end"].shape)
                                               for p in parts]) for k in parts[0][pol.name]}
    return merged


def _screen(terms: dict[str, np.ndarray], acceptance: bool, max_discard: float = 0.01):
    exited = terms["exited"]
    n_out = int(np.count_nonzero(exited))
    frac = n_out / exited.size
    if frac > max_discard:
        msg = f"{n_out} of {exited.size} factor paths left the spatial box ({frac:.2%})"
        if acceptance:
            raise AcceptanceError(msg)
        log.warning(msg)
    return ~exited, n_out


def estimate_value(spec: ProblemSpec, policy: Policy, x0: float, y0, n_paths: int,
                   mode: str = "penalized", *, N: float | None = None, mesh=None, seed: int = 0,
                   workers: int = 1, box=None, fine_mesh=None, acceptance: bool = False) -> CostEstimate:
    """Mean cost of ``policy`` from ``(0, x0, y0)``; penalized mode adds ``N x_T^2``."""
    if n_paths < 100:
        raise InputError("estimate_value needs n_paths >= 100")
    if mode not in ("penalized", "constrained"):
        raise InputError(f"unknown mode {mode!r}")
    surface = getattr(policy, "surface", None)
    if mesh is None:
        if surface is None:
            raise InputError("mesh required for policies without a surface")
        mesh = surface.times
    if box is None and surface is not None:
        box = _box(surface)
    if mode == "penalized":
        if N is None:
            N = None if surface is None or surface.is_limit else float(surface.truncation)
        if N is None or is_inf(N):
            raise InputError("penalized mode needs a finite N")
    else:
        N = None
    terms = run_ensemble(spec, [policy], x0, y0, mesh, n_paths, seed=seed, workers=workers, box=box,
                         fine_mesh=fine_mesh, N=N)[policy.name]
    keep, n_out = _screen(terms, acceptance)
    return CostEstimate.from_samples({k: terms[k][keep] for k in TERMS}, n_out, policy.name)


@dataclass
class ComparisonRow:
    policy: str
    estimate: CostEstimate
    diff_mean: float
    diff_stderr: float
    passed: bool

    def to_dict(self):
        return {"policy": self.policy, **{f"cost_{k}": v for k, v in self.estimate.to_dict().items()
                                          if k != "policy"},
                "diff_mean": self.diff_mean, "diff_stderr": self.diff_stderr, "passed": self.passed}


@dataclass
class ComparisonTable:
    reference: CostEstimate
    rows: list[ComparisonRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def reports(self) -> list[CheckReport]:
        return [CheckReport(f"feedback vs {r.policy}", r.passed, r.diff_mean, -3.0 * r.diff_stderr,
                            details=r.to_dict()) for r in self.rows]


def compare_policies(spec: ProblemSpec, surface: ValueSurface, x0: float, y0, n_paths: int, *,
                     delta: float = 0.2, seed: int = 0, workers: int = 1, mesh=None,
                     acceptance: bool = False) -> ComparisonTable:
    """Feedback against TWAP, ``(1 +- delta)``-scaled feedback and dark-pool-off feedback.

    Each competitor passes when ``mean(J_comp - J_fb) >= -3`` paired standard errors.
    """
    if surface.is_limit:
        raise InputError("policy comparison runs in penalized mode and needs a finite-N surface")
    N = float(surface.truncation)
    fb = FeedbackPolicy(surface, spec)
    comps: list[Policy] = [TWAPPolicy(x0, spec.horizon, len(spec.marks)), scaled(fb, 1 + delta),
                           scaled(fb, 1 - delta), dark_pool_off(fb)]
    mesh = surface.times if mesh is None else mesh
    terms = run_ensemble(spec, [fb] + comps, x0, y0, mesh, n_paths, seed=seed, workers=workers,
                         box=_box(surface), N=N)
    keep, n_out = _screen(terms[fb.name], acceptance)
    ref = CostEstimate.from_samples({k: terms[fb.name][k][keep] for k in TERMS}, n_out, fb.name)
    rows = []
    for pol in comps:
        est = CostEstimate.from_samples({k: terms[pol.name][k][keep] for k in TERMS}, n_out, pol.name)
        diff = est.samples - ref.samples
        m = _fsum_mean(diff)
        se = math.sqrt(math.fsum(((diff - m) ** 2).tolist()) / (diff.size - 1) / diff.size)
        rows.append(ComparisonRow(pol.name, est, m, se, m >= -3.0 * se))
    return ComparisonTable(ref, rows)


def check_liquidation(spec: ProblemSpec, policy_limit: FeedbackPolicy, x0: float, y0, n_paths: int,
                      eps: float, tol: float = 0.05, *, safety: float = 2.0, seed: int = 0,
                      workers: int = 1) -> CheckReport:
    """99th percentile of ``|x_{T - eps}|/|x0|`` under the singular-limit feedback.

    Without crossing marks the threshold is ``safety (eps/T)^{c0/Lambda}``;
    with a finite-gamma mark it is ``tol``.
    """
    if not policy_limit.surface.is_limit:
        raise InputError("check_liquidation needs a singular-limit policy")
    if x0 == 0:
        raise DomainError("x0 must be nonzero")
    T = spec.horizon
    t_end = T - eps
    times = policy_limit.surface.times
    mesh = times[times <= t_end + 1e-12 * T]
    if mesh.size < 2:
        ratio = np.ones(1)
        n_out = 0
    else:
        if abs(mesh[-1] - t_end) > 1e-9 * T:
            mesh = np.append(mesh, t_end)
        terms = run_ensemble(spec, [policy_limit], x0, y0, mesh, n_paths, seed=seed, workers=workers,
                             box=_box(policy_limit.surface))[policy_limit.name]
        keep, n_out = _screen(terms, False)
        ratio = np.abs(terms["x_end"][keep]) / abs(x0)
    crossing = any(not is_inf(m.gamma) for m in spec.marks)
    if crossing:
        threshold, rule = tol, "jump tolerance"
    else:
        bound, _ = decay_bound(spec, eps)
        threshold, rule = safety * bound, f"{safety:g} (eps/T)^(c0/Lambda)"
    p99 = float(np.percentile(ratio, 99))
    return CheckReport("liquidation" + (" (jumps)" if crossing else " (no jumps)"), p99 <= threshold, p99,
                       threshold, details={"max_ratio": float(ratio.max()), "rule": rule,
                                           "discarded": n_out, "n_paths": int(ratio.size)})


@dataclass
class ResidualCurve:
    """RMS of the summed residual per mesh, split into bias (path mean) and fluctuation (path std)."""

    dts: np.ndarray
    rms: np.ndarray
    exponent: float
    bias: np.ndarray
    spread: np.ndarray
    bias_exponent: float
    spread_exponent: float

    def to_dict(self):
        return {"dts": self.dts.tolist(), "rms": self.rms.tolist(), "exponent": self.exponent,
                "bias": self.bias.tolist(), "spread": self.spread.tolist(),
                "bias_exponent": self.bias_exponent, "spread_exponent": self.spread_exponent}


def _slope(dts: np.ndarray, vals: np.ndarray) -> float:
    vals = np.abs(vals)
    if not np.all(vals > 0):
        return float("nan")
    return float(np.polyfit(np.log(dts), np.log(vals), 1)[0])


def bsde_residual(spec: ProblemSpec, surface_N: ValueSurface, n_paths: int, mesh_list: Sequence, *,
                  y0=0.0, seed: int = 0, horizon: float | None = None) -> ResidualCurve:
    """RMS over paths of ``sum_i R_i``, ``R_i = Y_{i+1} - Y_i + F(t_i, y_i, Y_i) dt - Z_i dW_i``.

    ``Y = u(t, y_t)`` and ``Z = sigma^* Du`` are read from the surface.
    ``mesh_list`` holds uniform step counts (or step sizes) over
    ``[0, horizon]``; every mesh must divide the finest one so that the
    Brownian increments are shared. The exponent is the least-squares slope
    of ``log rms`` against ``log dt``.
    """
    if surface_N.is_limit:
        raise InputError("bsde_residual needs a finite-N surface")
    if surface_N.gradient is None:
        raise InputError("surface has no gradient")
    H = float(surface_N.times[-1]) if horizon is None else float(horizon)
    if H > surface_N.times[-1] + 1e-12:
        raise DomainError("horizon beyond the surface range")
    steps = []
    for m in mesh_list:
        steps.append(int(m) if float(m) >= 1 and float(m).is_integer() else int(round(H / float(m))))
    finest = max(steps)
    if any(finest % s for s in steps):
        raise InputError(f"step counts {steps} must divide the finest one")
    fine = np.linspace(0.0, H, finest + 1)
    gw, _ = block_streams(seed, 0)
    dW_fine = brownian_increments(gw, n_paths, fine, spec.n_brownian)
    y0 = np.broadcast_to(np.asarray(y0, float).reshape(-1), (spec.dim,))
    rms, bias, spread = [], [], []
    for s in steps:
        mesh = fine[:: finest // s]
        dW = aggregate_increments(dW_fine, fine, mesh)
        y, _ = simulate_factor(spec, y0, mesh, dW=dW)
        total = np.zeros(n_paths)
        Y = surface_N.value(mesh[0], y[:, 0])
        for i in range(s):
            t, yi = mesh[i], y[:, i]
            Du = surface_N.grad(t, yi).reshape(n_paths, spec.dim)
            Z = np.einsum("pdm,pd->pm", spec.sigma(t, yi), Du)
            Y_next = surface_N.value(mesh[i + 1], y[:, i + 1])
            F = driver_F(spec, t, yi, np.maximum(Y, 0.0))
            total += Y_next - Y + F * (mesh[i + 1] - t) - np.sum(Z * dW[:, i], axis=-1)
            Y = Y_next
        rms.append(math.sqrt(_fsum_mean(total * total)))
        m = _fsum_mean(total)
        bias.append(m)
        spread.append(math.sqrt(max(_fsum_mean((total - m) ** 2), 0.0)))
    dts = H / np.asarray(steps, dtype=float)
    order = np.argsort(-dts)
    dts, rms_a = dts[order], np.asarray(rms)[order]
    bias_a, spread_a = np.asarray(bias)[order], np.asarray(spread)[order]
    return ResidualCurve(dts, rms_a, _slope(dts, rms_a), bias_a, spread_a, _slope(dts, bias_a),
                         _slope(dts, spread_a))


def value_identity(spec: ProblemSpec, surface: ValueSurface, refined: ValueSurface, x0: float, y0,
                   n_paths: int, *, seed: int = 0, workers: int = 1, acceptance: bool = True) -> CheckReport:
    """``|MC mean - u^N(0, y0) x0^2| <= 3 stderr + budget`` in penalized mode.

    ``budget`` is the change of ``u^N(0, y0) x0^2`` between ``surface`` and
    its refinement ``refined`` plus the change of the MC mean when the
    simulation mesh is refined with common Brownian increments, each scaled
    by the Richardson factor ``1/(1 - 2^-1) = 2``: for a method of order at
    least one the coarse error is at most twice the change under halving.
    """
    N = float(surface.truncation)
    y0a = np.asarray(y0, float).reshape(1, -1)
    u0 = float(surface.value(0.0, y0a)[0])
    u0_fine = float(refined.value(0.0, y0a)[0])
    pol = FeedbackPolicy(surface, spec)
    coarse_mesh = surface.times
    fine_mesh = np.sort(np.concatenate([coarse_mesh, 0.5 * (coarse_mesh[1:] + coarse_mesh[:-1])]))
    est = estimate_value(spec, pol, x0, y0, n_paths, N=N, mesh=coarse_mesh, fine_mesh=fine_mesh,
                         seed=seed, workers=workers, acceptance=acceptance)
    est_fine = estimate_value(spec, pol, x0, y0, n_paths, N=N, mesh=fine_mesh, seed=seed,
                              workers=workers, acceptance=acceptance)
    budget = RICHARDSON * (abs(u0_fine - u0) * x0 * x0 + abs(est_fine.mean - est.mean))
    target = u0 * x0 * x0
    err = abs(est.mean - target)
    allowed = 3.0 * est.stderr + budget
    return CheckReport(f"value identity N={N:g}", err <= allowed, err, allowed,
                       details={"mc": est.to_dict(), "mc_fine_mesh": est_fine.mean, "pde": target,
                                "pde_refined": u0_fine * x0 * x0, "budget": budget})


def check_monotone_paths(spec: ProblemSpec, policy: Policy, x0: float, y0, n_paths: int, *, seed: int = 0,
                         workers: int = 1, mesh=None) -> CheckReport:
    """Fraction of seeded feedback paths whose position never increases (knots and fills)."""
    if x0 <= 0:
        raise DomainError("monotone-state check needs x0 > 0")
    surface = getattr(policy, "surface", None)
    mesh = surface.times if mesh is None else np.asarray(mesh, float)
    sizes = _n_blocks(n_paths, BLOCK)

    def one(b: int):
        gw, gj = block_streams(seed, b)
        dW = brownian_increments(gw, sizes[b], mesh, spec.n_brownian)
        jumps = draw_jumps(gj, sizes[b], spec.intensities, spec.horizon)
        rec = simulate_batch(spec, policy, x0, y0, mesh, dW=dW, jumps=jumps, seed=seed)
        ok = np.all(np.diff(rec.x, axis=1) <= 0, axis=1) & np.all(rec.x >= 0, axis=1)
        for p, fl in enumerate(rec.fills):
            if any(rho < 0 or rho > xm for _, _, rho, xm in fl):
                ok[p] = False
        return ok

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    else:
        parts = [one(b) for b in range(len(sizes))]
    ok = np.concatenate(parts)
    frac = float(np.mean(ok))
    bad = np.flatnonzero(~ok)
    return CheckReport("monotone state", frac == 1.0, frac, 1.0,
                       {"first_bad_path": int(bad[0])} if bad.size else {}, {"n_paths": int(ok.size)})
