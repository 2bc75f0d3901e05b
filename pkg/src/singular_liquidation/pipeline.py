"""Experiment orchestration behind the command line: validate, solve, verify, report.

All emitted files are deterministic functions of the config: no
timestamps, fixed float formatting, and every file carries the config hash
and tool version.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .config import ExperimentConfig, pair_spec
from .control import FeedbackPolicy
from .errors import AssumptionError, InputError
from .mc import (bsde_residual, check_liquidation, check_monotone_paths, compare_policies,
                 value_identity)
from .model import ProblemSpec, SampleGrid, ValidationReport, validate_spec
from .pde import (Grid, SingularSolution, build_grid, check_growth, check_monotone_in_N, check_sandwich,
                  check_shifted_upper_bound, compare_coefficients, gradient_diagnostics,
                  gradient_transform_params, solve_singular, solve_truncated)
from .pde.io import SurfaceCache, cache_key, load_surface, write_surface_csv
from .pde.surface import ValueSurface
from .reports import CheckReport, jsonable
from .riccati import (growth_constants, homogeneous_from_spec, sandwich_envelope,
                      solve_homogeneous_ode)
from .sentinels import is_inf

log = logging.getLogger(__name__)

RESIDUAL_BANDS = {"diffusive": (0.35, 0.65), "deterministic": (0.7, 1.3)}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_json(path: Path, payload: dict, cfg: ExperimentConfig) -> Path:
    body = {"config_hash": cfg.content_hash(), "version": __version__, **payload}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(body), sort_keys=True, indent=2) + "\n")
    return path


def write_csv(path: Path, header: list[str], rows, cfg: ExperimentConfig) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash: {cfg.content_hash()}\n# version: {__version__}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _n_label(n) -> str:
    return "limit" if is_inf(n) else f"N{float(n):g}"


@dataclass
class Experiment:
    """Resolved config plus the objects derived from it."""

    cfg: ExperimentConfig
    workers: int = 1
    out: Path | None = None
    spec: ProblemSpec = field(init=False)
    grid: Grid = field(init=False)

    def __post_init__(self):
        self.spec = self.cfg.spec()
        g = self.cfg.grid
        self.grid = build_grid(self.spec.horizon, self.spec.dim, box=g.box, n_y=g.n_y, n_t=g.n_t,
                               grading=g.grading, cutoff=g.cutoff, insert_cutoff=g.insert_cutoff,
                               reaction_substeps=g.reaction_substeps)
        self.out = Path(self.cfg.output.directory) if self.out is None else Path(self.out)
        self.cache = SurfaceCache(self.out / "cache")

    # -- surfaces ------------------------------------------------------------
    def surface(self, N: float, spec: ProblemSpec | None = None, grid: Grid | None = None) -> ValueSurface:
        return self.cache.get_or_solve(spec or self.spec, grid or self.grid, float(N),
                                       lambda s, g, n: solve_truncated(s, g, n))

    def singular(self) -> SingularSolution:
        return solve_singular(self.spec, self.grid, self.cfg.truncation.N_schedule, workers=self.workers,
                              solver=self.surface)

    def sample_grid(self) -> SampleGrid:
        lo = min(float(a[0]) for a in self.grid.axes)
        hi = max(float(a[-1]) for a in self.grid.axes)
        return SampleGrid.box(self.spec, lo, hi)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def run_validate(exp: Experiment) -> ValidationReport:
    report = validate_spec(exp.spec, exp.sample_grid())
    write_json(exp.out / "validate" / "validation.json", report.to_dict(), exp.cfg)
    return report


def _require_valid(exp: Experiment) -> None:
    report = validate_spec(exp.spec, exp.sample_grid())
    if not report.passed:
        raise AssumptionError("assumption checks failed:\n" + report.to_text())


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def run_solve(exp: Experiment) -> dict[str, Any]:
    _require_valid(exp)
    sched = exp.cfg.truncation.N_schedule
    hdr = {"config_hash": exp.cfg.content_hash(), "version": __version__}
    out = exp.out / "surfaces"
    out.mkdir(parents=True, exist_ok=True)
    summary: dict[str, Any] = {"schedule": sched, "files": []}
    if len(sched) == 1:
        surf = exp.surface(sched[0])
        write_surface_csv(out / f"surface_{_n_label(sched[0])}.csv", surf, hdr)
        summary["files"].append(f"surface_{_n_label(sched[0])}.csv")
        summary["clamped"] = surf.meta.get("clamped", 0)
    else:
        sol = exp.singular()
        for n, surf in sol.surfaces.items():
            write_surface_csv(out / f"surface_{_n_label(n)}.csv", surf, hdr)
            summary["files"].append(f"surface_{_n_label(n)}.csv")
        write_surface_csv(out / "surface_limit.csv", sol.surface, hdr)
        summary["files"].append("surface_limit.csv")
        summary["convergence"] = sol.to_dict()
        summary["clamped"] = sum(s.meta.get("clamped", 0) for s in sol.surfaces.values())
    summary["cache"] = {"hits": exp.cache.hits, "misses": exp.cache.misses}
    write_json(out / "convergence.json", {k: v for k, v in summary.items() if k != "cache"}, exp.cfg)
    return summary


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def oracle_checks(exp: Experiment, surfaces: dict[float, ValueSurface], tol: float) -> list[CheckReport]:
    """Homogeneous costs: every surface against the scalar ODE on ``t <= T - cutoff``."""
    try:
        homogeneous_from_spec(exp.spec, 1.0)
    except Exception:  # noqa: BLE001 - spatially varying or mixed gammas: no scalar oracle
        return []
    reports = []
    T, eps = exp.spec.horizon, exp.grid.cutoff
    for n, surf in surfaces.items():
        h = homogeneous_from_spec(exp.spec, n)
        g = solve_homogeneous_ode(h, surf.times, rtol=1e-10, atol=1e-12)
        keep = surf.times <= T - eps + 1e-12 * T
        ref = g[keep].reshape((-1,) + (1,) * surf.dim)
        err = np.abs(surf.values[keep] - ref) / ref
        k = int(np.argmax(err))
        idx = np.unravel_index(k, err.shape)
        reports.append(CheckReport(f"scalar oracle N={n:g}", float(err.flat[k]) <= tol, float(err.flat[k]), tol,
                                   {"t": float(surf.times[keep][idx[0]])}))
    return reports


def residual_band(exp: Experiment, curve) -> tuple[str, tuple[float, float]]:
    """Expected exponent band of the RMS residual.

    The summed residual is a bias of order ``dt`` plus a martingale part of
    order ``dt^{1/2}``; the RMS inherits the rate of whichever dominates on
    the finest mesh. ``expect`` in the config overrides the choice.
    """
    mode = exp.cfg.mc.residual.expect
    if mode == "auto":
        mode = "diffusive" if curve.spread[-1] > abs(curve.bias[-1]) else "deterministic"
    return mode, RESIDUAL_BANDS[mode]


def run_verify(exp: Experiment) -> list[CheckReport]:
    _require_valid(exp)
    cfg, spec, grid = exp.cfg, exp.spec, exp.grid
    d = cfg.diagnostics
    mc = cfg.mc
    y0 = np.asarray(exp.cfg.y0())
    reports: list[CheckReport] = []
    need_surfaces = any(t.enabled for t in (d.oracle, d.sandwich, d.monotone_N, d.growth, d.gradient,
                                            d.shifted_bound, d.liquidation))
    sol = None
    if need_surfaces:
        if len(cfg.truncation.N_schedule) > 1:
            sol = exp.singular()
            surfaces = sol.surfaces
        else:
            surfaces = {cfg.truncation.N_schedule[0]: exp.surface(cfg.truncation.N_schedule[0])}
        if d.oracle.enabled:
            reports += oracle_checks(exp, surfaces, d.oracle.tol)
        if d.sandwich.enabled:
            reports += [check_sandwich(s, spec, d.sandwich.tol) for n, s in surfaces.items()
                        if n > spec.Lambda]
        if d.monotone_N.enabled and len(surfaces) > 1:
            reports.append(check_monotone_in_N(surfaces, d.monotone_N.tol))
        if sol is not None and d.growth.enabled:
            reports.append(check_growth(sol.surface, spec))
        if sol is not None and d.shifted_bound.enabled:
            deltas = [f * grid.cutoff for f in d.shifted_bound.delta_fractions]
            reports.append(check_shifted_upper_bound(sol.surface, spec.Lambda, deltas, tol=d.shifted_bound.tol))
        if d.gradient.enabled:
            params = gradient_transform_params(spec, d.gradient.p0, d.gradient.T1, grid)
            levels = d.gradient.levels or [n for n in surfaces if n > params.N0]
            pick = {float(n): (surfaces[n] if n in surfaces else exp.surface(n)) for n in levels}
            diag = gradient_diagnostics(pick, params, spec.weight_q, spec, d.gradient.slack)
            reports += diag.reports()
    if d.comparison.enabled:
        for pair in d.comparison.pairs:
            other = pair_spec(spec, pair)
            r = compare_coefficients(spec, other, grid, d.comparison.N, tol=d.comparison.tol,
                                     solver=lambda s, n: exp.surface(n, s))
            r.name = f"comparison {pair.name}"
            reports.append(r)
    need_N = d.value_identity.enabled or d.policy_ranking.enabled or d.state_monotone.enabled
    if need_N:
        surf_N = exp.surface(mc.N)
    if d.value_identity.enabled:
        refined = exp.surface(mc.N, grid=grid.refined())
        reports.append(value_identity(spec, surf_N, refined, mc.x0, y0, mc.n_paths, seed=mc.seed,
                                      workers=exp.workers))
    if d.policy_ranking.enabled:
        table = compare_policies(spec, surf_N, mc.x0, y0, mc.n_paths, delta=mc.delta, seed=mc.seed + 1,
                                 workers=exp.workers, acceptance=True)
        reports += table.reports()
    if d.liquidation.enabled:
        if sol is None:
            raise InputError("liquidation check needs an N schedule with at least two levels")
        pol = FeedbackPolicy(sol.surface, spec)
        reports.append(check_liquidation(spec, pol, mc.x0, y0, mc.liquidation_paths, grid.cutoff,
                                         mc.liquidation_tol, safety=mc.liquidation_safety,
                                         seed=mc.seed + 2, workers=exp.workers))
    if d.state_monotone.enabled:
        reports.append(check_monotone_paths(spec, FeedbackPolicy(surf_N, spec), mc.x0, y0, mc.monotone_paths,
                                            seed=mc.seed + 3, workers=exp.workers))
    if d.bsde_residual.enabled:
        r = mc.residual
        surf_r = exp.surface(r.N)
        curve = bsde_residual(spec, surf_r, r.n_paths, r.meshes, y0=y0, seed=mc.seed + 4, horizon=r.horizon)
        mode, (lo, hi) = residual_band(exp, curve)
        ok = lo <= curve.exponent <= hi
        reports.append(CheckReport(f"bsde residual rate ({mode})", ok, curve.exponent, None,
                                   details={**curve.to_dict(), "band": [lo, hi]}))
    return reports


def write_verdicts(exp: Experiment, reports: list[CheckReport]) -> None:
    out = exp.out / "verify"
    write_json(out / "verdicts.json", {"passed": all(r.passed for r in reports),
                                       "checks": [r.to_dict() for r in reports],
                                       "config": exp.cfg.resolved()}, exp.cfg)
    write_csv(out / "verdicts.csv", ["check", "status", "observed", "tolerance"],
              [[r.name, "PASS" if r.passed else "FAIL", float(r.observed),
                "" if r.tolerance is None else float(r.tolerance)] for r in reports], exp.cfg)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def run_report(exp: Experiment) -> tuple[list[str], list[str]]:
    """Plot-ready CSVs from cached surfaces and stored verdicts; returns ``(written, missing)``."""
    cfg, spec, grid = exp.cfg, exp.spec, exp.grid
    sched = cfg.truncation.N_schedule
    missing, surfaces = [], {}
    for n in sched:
        p = exp.cache.path_for(spec, grid, float(n))
        if p.exists():
            surfaces[float(n)] = load_surface(p)
        else:
            missing.append(f"cache/{cache_key(spec, grid, float(n))}.npz (N={n:g})")
    verdicts = exp.out / "verify" / "verdicts.json"
    if not verdicts.exists():
        missing.append("verify/verdicts.json")
    if missing:
        return [], missing
    out = exp.out / "report"
    written = []
    T, eps = spec.horizon, grid.cutoff
    y0 = np.asarray(cfg.y0()).reshape(1, -1)
    # value slices at a few times
    picks = sorted({0.0, 0.5 * T, T - 0.1 * T, T - eps})
    rows = []
    for n, s in surfaces.items():
        for t in picks:
            i = int(np.argmin(np.abs(s.times - t)))
            vals = s.values[i].reshape(-1)
            pts = s.points.reshape(-1, s.dim)
            rows += [[float(n), float(s.times[i])] + [float(v) for v in pts[j]] + [float(vals[j])]
                     for j in range(vals.size)]
    write_csv(out / "slices.csv", ["N", "t"] + [f"y{j + 1}" for j in range(spec.dim)] + ["u"], rows, cfg)
    written.append("slices.csv")
    # envelopes at y0
    c0, c1 = growth_constants(spec)
    rows = []
    for n, s in surfaces.items():
        keep = s.times <= T - eps + 1e-12 * T
        t = s.times[keep]
        u0 = np.array([float(s.value(tt, y0)[0]) for tt in t])
        lo, hi = sandwich_envelope(spec, n, t) if n > spec.Lambda else (np.full(t.shape, math.nan),) * 2
        rows += [[float(n), float(tt), float(a), float(c0 / (T - tt)), float(c1 / (T - tt)), float(b), float(c)]
                 for tt, a, b, c in zip(t, u0, np.broadcast_to(lo, t.shape), np.broadcast_to(hi, t.shape))]
    write_csv(out / "envelopes.csv", ["N", "t", "u_y0", "growth_lower", "growth_upper", "sandwich_lower",
                                      "sandwich_upper"], rows, cfg)
    written.append("envelopes.csv")
    # gradient norms against N
    g = cfg.diagnostics.gradient
    try:
        params = gradient_transform_params(spec, g.p0, g.T1, grid)
        levels = [n for n in surfaces if n > params.N0]
        diag = gradient_diagnostics({n: surfaces[n] for n in levels}, params, spec.weight_q, spec, g.slack)
        rows = [[float(n), diag.sups[n], diag.deltas[n]] for n in levels]
    except Exception as exc:  # noqa: BLE001 - report what could not be computed
        log.warning("gradient norms skipped: %s", exc)
        rows = []
    write_csv(out / "gradient_norms.csv", ["N", "sup_norm", "delta"], rows, cfg)
    written.append("gradient_norms.csv")
    # MC tables from the stored verdicts
    data = json.loads(verdicts.read_text())
    rows = []
    for chk in data["checks"]:
        det = chk.get("details") or {}
        if "diff_mean" in det:
            rows.append([chk["name"], det.get("cost_mean"), det.get("cost_stderr"), det["diff_mean"],
                         det["diff_stderr"], "PASS" if chk["passed"] else "FAIL"])
        elif "mc" in det:
            mcd = det["mc"]
            rows.append([chk["name"], mcd["mean"], mcd["stderr"], det["pde"], det["budget"],
                         "PASS" if chk["passed"] else "FAIL"])
    write_csv(out / "mc_tables.csv", ["check", "mean", "stderr", "reference_or_diff", "budget_or_diff_stderr",
                                      "status"], rows, cfg)
    written.append("mc_tables.csv")
    return written, []
