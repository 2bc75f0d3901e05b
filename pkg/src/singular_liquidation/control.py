"""Feedback policies, factor/state simulation and cost accounting.

Every policy here is affine in the position: the exchange rate is
``xi = c(t, y) x + a(t, y)`` and the order offered to mark ``k`` is
``rho_k = f_k(t, y) x_-``. On each mesh interval ``(c, a, f)`` are frozen at
the interval midpoint in time (factor at the left knot), the position is
advanced with the exact solution of ``dx = -(c x + a) dt`` between jump
events, and the running costs are integrated exactly along that solution.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import DomainError, InputError
from .model import ProblemSpec
from .pde.surface import ValueSurface
from .sentinels import is_inf

# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


class Policy(Protocol):
    name: str

    def coefficients(self, t: float, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(c, a, f)`` with shapes ``(n,)``, ``(n,)`` and ``(n, K)`` for factor values ``y`` of shape ``(n, d)``."""
        ...


def _gamma_fraction(u: np.ndarray, gammas: list) -> np.ndarray:
    """``u / (gamma_k + u)`` per mark; ``INF`` gives 0 and ``gamma = u = 0`` gives 1."""
    cols = []
    for g in gammas:
        if is_inf(g):
            cols.append(np.zeros_like(u))
        else:
            den = g + u
            cols.append(np.divide(u, den, out=np.ones_like(u), where=den > 0))
    return np.stack(cols, axis=-1) if cols else np.zeros(u.shape + (0,))


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """``xi = scale * u x / eta`` and ``rho_k = u x_- / (gamma_k + u)`` read from a value surface.

    ``dark_pool=False`` switches the crossing orders off (``rho = 0``).
    """

    surface: ValueSurface
    spec: ProblemSpec
    scale: float = 1.0
    dark_pool: bool = True
    name: str = "feedback"

    @property
    def t_max(self) -> float:
        return float(self.surface.times[-1])

    def value(self, t: float, y: np.ndarray) -> np.ndarray:
        if t > self.t_max + 1e-12:
            what = "the cutoff of the singular-limit surface" if self.surface.is_limit else "the horizon"
            raise DomainError(f"t={t} lies beyond {what} (t_max={self.t_max})")
        return np.maximum(self.surface.value(t, y), 0.0)

    def coefficients(self, t, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        u = self.value(t, y)
        eta = self.spec.eta_at(t, y)
        c = self.scale * u / eta
        if self.dark_pool:
            f = _gamma_fraction(u, self.spec.gammas_at(t, y))
        else:
            f = np.zeros(u.shape + (len(self.spec.marks),))
        return c, np.zeros_like(c), f


@dataclass(frozen=True)
class TWAPPolicy:
    """Constant rate ``x0 / T`` on the exchange, no crossing orders."""

    x0: float
    horizon: float
    n_marks: int
    name: str = "twap"

    def coefficients(self, t, y):
        n = np.atleast_2d(y).shape[0]
        return np.zeros(n), np.full(n, self.x0 / self.horizon), np.zeros((n, self.n_marks))


def scaled(policy: FeedbackPolicy, factor: float) -> FeedbackPolicy:
    return FeedbackPolicy(policy.surface, policy.spec, policy.scale * factor, policy.dark_pool,
                          f"feedback x{factor:g}")


def dark_pool_off(policy: FeedbackPolicy) -> FeedbackPolicy:
    return FeedbackPolicy(policy.surface, policy.spec, policy.scale, False, "dark pool off")


def feedback(policy: FeedbackPolicy, t: float, x: float, y) -> tuple[float, list[float]]:
    """Pointwise optimal controls ``(xi*, [rho*_k])`` at state ``(t, x, y)``."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    u = float(policy.value(t, y)[0])
    if not math.isfinite(u):
        raise DomainError(f"value is not finite at t={t}")
    eta = float(policy.spec.eta_at(t, y)[0])
    xi = policy.scale * u * x / eta
    if not policy.dark_pool:
        return xi, [0.0] * len(policy.spec.marks)
    frac = _gamma_fraction(np.array([u]), policy.spec.gammas_at(t, y))[0]
    return xi, [float(f) * x for f in frac]


# ---------------------------------------------------------------------------
# random inputs
# ---------------------------------------------------------------------------

def block_streams(seed: int, block: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent Brownian and jump generators for one block of paths.

    Streams depend only on ``(seed, block)``, so any split of blocks across
    workers reproduces the same numbers.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    b, j = ss.spawn(2)
    return np.random.default_rng(b), np.random.default_rng(j)


def brownian_increments(rng: np.random.Generator, n_paths: int, mesh: np.ndarray, m: int) -> np.ndarray:
    """``dW`` of shape ``(n_paths, len(mesh) - 1, m)``."""
    dt = np.diff(mesh)
    return rng.standard_normal((n_paths, dt.size, m)) * np.sqrt(dt)[None, :, None]


def aggregate_increments(dW: np.ndarray, fine: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    """Sum fine-mesh increments onto a coarser mesh whose knots are a subset of ``fine``."""
    idx = np.searchsorted(fine, coarse)
    if idx[-1] >= fine.size or not np.allclose(fine[idx], coarse, rtol=0, atol=1e-12):
        raise InputError("coarse mesh knots must be knots of the fine mesh")
    csum = np.concatenate([np.zeros(dW.shape[:1] + (1,) + dW.shape[2:]), np.cumsum(dW, axis=1)], axis=1)
    return csum[:, idx[1:]] - csum[:, idx[:-1]]


@dataclass(frozen=True)
class JumpEvents:
    """Jump times and marks per path (``times[p]`` sorted)."""

    times: tuple[np.ndarray, ...]
    marks: tuple[np.ndarray, ...]


def draw_jumps(rng: np.random.Generator, n_paths: int, intensities: np.ndarray, horizon: float) -> JumpEvents:
    """Poisson clock of total rate ``sum mu_k`` on ``[0, horizon]``; marks drawn with weights ``mu_k``."""
    mu = float(np.sum(intensities))
    times, marks = [], []
    if mu <= 0:
        empty = np.zeros(0)
        return JumpEvents(tuple(empty for _ in range(n_paths)), tuple(empty.astype(int) for _ in range(n_paths)))
    probs = intensities / mu
    counts = rng.poisson(mu * horizon, size=n_paths)
    for n in counts:
        # given the count, jump times are sorted uniforms
        times.append(np.sort(rng.uniform(0.0, horizon, size=n)))
        marks.append(rng.choice(len(probs), size=n, p=probs))
    return JumpEvents(tuple(times), tuple(marks))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def simulate_factor(spec: ProblemSpec, y0, mesh, seed: int | None = None, *, dW: np.ndarray | None = None,
                    n_paths: int = 1, box: Sequence[tuple[float, float]] | None = None):
    """Euler-Maruyama factor paths, shape ``(n_paths, len(mesh), d)``, and an exit mask.

    Either ``seed`` or precomputed increments ``dW`` must be given.
    """
    mesh = np.asarray(mesh, dtype=float)
    if mesh.ndim != 1 or mesh.size < 2 or np.any(np.diff(mesh) <= 0):
        raise InputError("mesh must be strictly increasing with at least two knots")
    if mesh[0] < 0 or mesh[-1] > spec.horizon + 1e-12:
        raise InputError("mesh must lie within [0, T]")
    if dW is None:
        if seed is None:
            raise InputError("give a seed or Brownian increments")
        dW = brownian_increments(block_streams(seed, 0)[0], n_paths, mesh, spec.n_brownian)
    n_paths = dW.shape[0]
    d = spec.dim
    y = np.empty((n_paths, mesh.size, d))
    y[:, 0] = np.broadcast_to(np.asarray(y0, dtype=float).reshape(-1), (n_paths, d))
    dt = np.diff(mesh)
    for i in range(dt.size):
        t, yi = mesh[i], y[:, i]
        y[:, i + 1] = yi + spec.b(t, yi) * dt[i] + np.einsum("pdm,pm->pd", spec.sigma(t, yi), dW[:, i])
    exited = np.zeros(n_paths, dtype=bool)
    if box is not None:
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        exited = np.any((y < lo) | (y > hi), axis=(1, 2))
    return y, exited


def _segment(x, c, a, s):
    """Exact solution of ``dx = -(c x + a) dt`` over length ``s`` and the integrals of ``xi^2`` and ``x^2``."""
    x_end = np.empty_like(x)
    i_xi = np.empty_like(x)
    i_x2 = np.empty_like(x)
    pos = c * s > 1e-12
    # c > 0
    cp, ap, xp = c[pos], a[pos], x[pos]
    sp_ = s if np.ndim(s) == 0 else s[pos]
    A = xp + ap / cp
    e1 = -np.expm1(-cp * sp_)
    e2 = -np.expm1(-2 * cp * sp_)
    x_end[pos] = A * np.exp(-cp * sp_) - ap / cp
    i_xi[pos] = cp * A * A * e2 / 2.0
    i_x2[pos] = A * A * e2 / (2 * cp) - 2 * A * (ap / cp) * e1 / cp + (ap / cp) ** 2 * sp_
    # c ~ 0: second-order expansion in c keeps continuity
    z = ~pos
    cz, az, xz = c[z], a[z], x[z]
    sz = s if np.ndim(s) == 0 else s[z]
    xi0 = cz * xz + az
    x_end[z] = xz - xi0 * sz + cz * xi0 * sz * sz / 2
    i_xi[z] = xi0 * xi0 * (sz - cz * sz * sz)
    i_x2[z] = xz * xz * sz - xz * xi0 * sz * sz + xi0 * xi0 * sz ** 3 / 3
    return np.maximum(x_end, 0.0), np.maximum(i_xi, 0.0), np.maximum(i_x2, 0.0)


@dataclass
class BatchRecord:
    """Simulated ensemble: mesh, factor and state paths, per-term running costs and jump fills."""

    mesh: np.ndarray
    y: np.ndarray
    x: np.ndarray
    impact: np.ndarray
    risk: np.ndarray
    dark: np.ndarray
    dark_events: np.ndarray
    exited: np.ndarray
    fills: list[list[tuple[float, int, float, float]]]
    x0: float
    policy: str
    seed: int | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def x_end(self) -> np.ndarray:
        return self.x[:, -1]

    def path(self, p: int) -> "PathRecord":
        return PathRecord(self.mesh.copy(), self.y[p].copy(), self.x[p].copy(), tuple(self.fills[p]),
                          {"impact": float(self.impact[p]), "risk": float(self.risk[p]),
                           "dark": float(self.dark[p]), "dark_events": float(self.dark_events[p])},
                          float(self.x[p, -1]), self.seed, bool(self.exited[p]), self.x0)


@dataclass(frozen=True, eq=False)
class PathRecord:
    """One simulated path.

    ``x`` holds the state at mesh knots; ``events`` holds
    ``(time, mark, fill, x_minus)`` where ``x_minus`` is the left limit.
    """

    mesh: np.ndarray
    y: np.ndarray
    x: np.ndarray
    events: tuple[tuple[float, int, float, float], ...]
    costs: dict[str, float]
    x_end: float
    seed: int | None
    exited: bool
    x0: float


def simulate_batch(spec: ProblemSpec, policy: Policy, x0: float, y0, mesh, *, dW: np.ndarray,
                   jumps: JumpEvents, box=None, seed: int | None = None) -> BatchRecord:
    """Simulate the position under ``policy`` along factor paths driven by ``dW`` and the given jumps."""
    mesh = np.asarray(mesh, dtype=float)
    y, exited = simulate_factor(spec, y0, mesh, dW=dW, box=box)
    n = y.shape[0]
    K = len(spec.marks)
    x = np.empty((n, mesh.size))
    x[:, 0] = x0
    impact, risk, dark, dark_ev = (np.zeros(n) for _ in range(4))
    fills: list[list[tuple[float, int, float, float]]] = [[] for _ in range(n)]
    mus = spec.intensities
    # jump bookkeeping: pointer per path into its sorted jump times
    ptr = np.zeros(n, dtype=int)
    jt = jumps.times
    jm = jumps.marks
    counts = np.array([t.size for t in jt])
    nxt = np.array([t[0] if t.size else np.inf for t in jt], dtype=float)
    for i in range(mesh.size - 1):
        t0, t1 = mesh[i], mesh[i + 1]
        h = t1 - t0
        tm = t0 + 0.5 * h
        yi = y[:, i]
        c, a, f = policy.coefficients(tm, yi)
        a = np.broadcast_to(a, c.shape)
        eta = spec.eta_at(tm, yi)
        lam = spec.lam_at(tm, yi)
        gam = spec.gammas_at(tm, yi)
        # compensator weight sum_k mu_k gamma_k f_k^2 (INF marks have f_k = 0)
        w_dark = np.zeros(n)
        for k, g in enumerate(gam):
            if not is_inf(g):
                w_dark += mus[k] * g * f[:, k] ** 2
        xc = x[:, i].copy()
        tc = np.full(n, t0)
        while True:
            jumping = nxt < t1
            s = np.where(jumping, nxt, t1) - tc
            xe, ixi, ix2 = _segment(xc, c, a, s)
            impact += eta * ixi
            risk += lam * ix2
            dark += w_dark * ix2
            xc, tc = xe, tc + s
            if not np.any(jumping):
                break
            for p in np.flatnonzero(jumping):
                k = int(jm[p][ptr[p]])
                rho = min(f[p, k] * xc[p], xc[p]) if K else 0.0
                g = gam[k]
                if rho > 0 and not is_inf(g):
                    dark_ev[p] += float(g[p] if np.ndim(g) else g) * rho * rho
                fills[p].append((float(nxt[p]), k, float(rho), float(xc[p])))
                xc[p] = max(xc[p] - rho, 0.0)
                ptr[p] += 1
                nxt[p] = jt[p][ptr[p]] if ptr[p] < counts[p] else np.inf
        x[:, i + 1] = xc
    return BatchRecord(mesh, y, x, impact, risk, dark, dark_ev, exited, fills, float(x0),
                       getattr(policy, "name", "policy"), seed)


def simulate_state(spec: ProblemSpec, policy: Policy, factor_path, x0: float, seed: int, mesh=None,
                   *, box=None) -> PathRecord:
    """One path along a given factor path (or a fresh one from ``seed`` when ``factor_path`` is None).

    The path's jump clock is drawn from the ``seed`` stream; giving the same
    seed reproduces the record bit for bit.
    """
    gen_w, gen_j = block_streams(seed, 0)
    if factor_path is not None:
        fp = np.asarray(factor_path, dtype=float)
        if mesh is None or fp.shape[0] != len(mesh):
            raise InputError("factor path and mesh lengths differ")
        mesh = np.asarray(mesh, dtype=float)
        dW = _implied_increments(spec, fp, mesh)
    else:
        if mesh is None:
            raise InputError("mesh required")
        mesh = np.asarray(mesh, dtype=float)
        dW = brownian_increments(gen_w, 1, mesh, spec.n_brownian)
    jumps = draw_jumps(gen_j, 1, spec.intensities, float(mesh[-1]))
    rec = simulate_batch(spec, policy, x0, (fp[0] if factor_path is not None else np.zeros(spec.dim)),
                         mesh, dW=dW, jumps=jumps, box=box, seed=seed)
    return rec.path(0)


def _implied_increments(spec: ProblemSpec, y: np.ndarray, mesh: np.ndarray) -> np.ndarray:
    """Brownian increments reproducing a given Euler path (needs square invertible sigma)."""
    y = y.reshape(len(mesh), -1)
    out = np.empty((1, len(mesh) - 1, spec.n_brownian))
    for i in range(len(mesh) - 1):
        t, yi = mesh[i], y[i:i + 1]
        resid = y[i + 1] - yi[0] - spec.b(t, yi)[0] * (mesh[i + 1] - t)
        sig = spec.sigma(t, yi)[0]
        if not np.any(sig):
            if np.max(np.abs(resid)) > 1e-9:
                raise InputError("factor path is inconsistent with a degenerate volatility")
            out[0, i] = 0.0
        else:
            out[0, i] = np.linalg.lstsq(sig, resid, rcond=None)[0]
    return out


# ---------------------------------------------------------------------------
# costs and path checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostResult:
    running: float
    penalty: float
    total: float
    x_end: float
    constraint_ok: bool | None = None
    breakdown: dict[str, float] = field(default_factory=dict)


def evaluate_cost(spec: ProblemSpec, record: PathRecord, terminal_mode: str = "penalized", *,
                  N: float | None = None, tol: float | None = None, dark: str = "compensator") -> CostResult:
    """Penalized: running cost plus ``N x_T^2``. Constrained: running cost and ``|x_end| <= tol``.

    ``dark`` selects the crossing-cost estimator: ``"compensator"`` integrates
    ``sum_k mu_k gamma_k rho_k^2`` in time, ``"events"`` sums ``gamma rho^2``
    over realised fills; both have the same expectation.
    """
    if dark not in ("compensator", "events"):
        raise InputError(f"unknown dark-pool cost estimator {dark!r}")
    d = record.costs["dark"] if dark == "compensator" else record.costs["dark_events"]
    running = record.costs["impact"] + record.costs["risk"] + d
    brk = {"impact": record.costs["impact"], "risk": record.costs["risk"], "dark": d}
    if terminal_mode == "penalized":
        if N is None or is_inf(N):
            raise InputError("penalized mode needs a finite N")
        pen = float(N) * record.x_end ** 2
        return CostResult(running, pen, running + pen, record.x_end, None, {**brk, "penalty": pen})
    if terminal_mode == "constrained":
        if tol is None or not tol > 0:
            raise InputError("constrained mode needs tol > 0")
        return CostResult(running, 0.0, running, record.x_end, abs(record.x_end) <= tol, {**brk, "penalty": 0.0})
    raise InputError(f"terminal_mode must be 'penalized' or 'constrained', got {terminal_mode!r}")


def check_state_monotone(record: PathRecord) -> tuple[bool, int | None]:
    """``(True, None)`` if the state never increases, else ``(False, first offending knot)``."""
    x = np.asarray(record.x, dtype=float)
    up = np.flatnonzero(np.diff(x) > 0)
    if up.size:
        return False, int(up[0] + 1)
    for t, _, rho, x_minus in record.events:
        if rho < 0 or rho > x_minus + 1e-15:
            return False, int(np.searchsorted(record.mesh, t))
    return True, None


@dataclass(frozen=True)
class DecayReport:
    passed: bool
    ratio: float
    bound: float
    exponent: float
    slack: float

    def to_dict(self):
        return dict(self.__dict__)


def decay_bound(spec: ProblemSpec, eps: float, c0: float | None = None) -> tuple[float, float]:
    """``((eps/T)^{c0/Lambda}, c0/Lambda)`` with ``c0 = kappa exp(-mu T)`` by default."""
    T = spec.horizon
    if c0 is None:
        c0 = spec.kappa * math.exp(-spec.mu_total * T)
    expo = c0 / spec.Lambda
    return (eps / T) ** expo, expo


def state_decay_bound(record: PathRecord, spec: ProblemSpec, eps: float | None = None, *,
                      c0: float | None = None, slack: float = 0.05) -> DecayReport:
    """``x_{T - eps} <= x0 (eps/T)^{c0/Lambda} (1 + slack)`` for a record ending at ``T - eps``.

    ``slack`` absorbs the frozen-rate mesh error (default 5%).
    """
    T = spec.horizon
    eps = T - float(record.mesh[-1]) if eps is None else eps
    if record.x0 <= 0:
        raise DomainError("decay bound needs x0 > 0")
    bound, expo = decay_bound(spec, eps, c0)
    ratio = record.x_end / record.x0
    return DecayReport(ratio <= bound * (1 + slack), ratio, bound, expo, slack)


def write_paths_csv(path: str | Path, batch: BatchRecord, header: dict | None = None,
                    max_paths: int | None = None) -> Path:
    """Long-format ``path, t, y..., x`` rows plus one ``event`` row per fill; header holds seed and mesh."""
    path = Path(path)
    d = batch.y.shape[-1]
    hdr = {"seed": batch.seed, "policy": batch.policy, "x0": batch.x0, "n_mesh": batch.mesh.size,
           "t_start": float(batch.mesh[0]), "t_end": float(batch.mesh[-1]), **(header or {})}
    n = batch.n_paths if max_paths is None else min(max_paths, batch.n_paths)
    with path.open("w", newline="") as fh:
        for k, v in hdr.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(["path", "kind", "t"] + [f"y{j + 1}" for j in range(d)] + ["x", "mark", "fill", "x_minus"])
        for p in range(n):
            for i, t in enumerate(batch.mesh):
                w.writerow([p, "knot", repr(float(t))] + [repr(float(v)) for v in batch.y[p, i]]
                           + [repr(float(batch.x[p, i])), "", "", ""])
            for t, k, rho, xm in batch.fills[p]:
                w.writerow([p, "event", repr(t)] + [""] * d + ["", k, repr(rho), repr(xm)])
    return path
