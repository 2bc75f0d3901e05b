"""Problem data, assumption checks, the driver and the weight transform."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .coefficients import Coefficient, Constant, coefficient_from_dict
from .errors import AssumptionError, ConfigError, DomainError
from .sentinels import INF, is_inf, parse_extended, to_jsonable


@dataclass(frozen=True)
class JumpMark:
    """One mark of the finite jump measure: intensity and dark-pool cost weight."""

    intensity: float
    gamma: Coefficient | Any  # Coefficient or INF

    def to_dict(self):
        return {"intensity": self.intensity,
                "gamma": "inf" if is_inf(self.gamma) else self.gamma.to_dict()}


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficient set of the liquidation problem.

    ``drift`` has ``dim`` entries, ``vol`` is a ``dim x m`` nested tuple.
    ``Lambda`` bounds ``|b|, |sigma|, eta, lambda`` and ``kappa`` bounds
    ``eta`` from below. ``L`` is the optional derivative bound, ``T0``/``p0``
    the pair used for the terminal-window impact-ratio condition.
    """

    horizon: float
    dim: int
    drift: tuple[Coefficient, ...]
    vol: tuple[tuple[Coefficient, ...], ...]
    eta: Coefficient
    lam: Coefficient
    marks: tuple[JumpMark, ...] = ()
    Lambda: float = 1.0
    kappa: float = 1.0
    L: float | None = None
    q: float | None = None
    T0: float = 0.0
    p0: float | None = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if len(self.drift) != self.dim:
            raise ConfigError(f"drift needs {self.dim} components, got {len(self.drift)}")
        if len(self.vol) != self.dim or len({len(row) for row in self.vol}) != 1 or not self.vol[0]:
            raise ConfigError(f"vol must be a {self.dim} x m matrix with m >= 1")
        for coef in (*self.drift, *(c for row in self.vol for c in row), self.eta, self.lam):
            coef.check_dim(self.dim)
        for mark in self.marks:
            if not mark.intensity > 0:
                raise ConfigError(f"jump intensity must be > 0, got {mark.intensity}")
            if not is_inf(mark.gamma):
                mark.gamma.check_dim(self.dim)
        if not self.kappa > 0 or not self.Lambda > 0:
            raise ConfigError("kappa and Lambda must be positive")
        if self.kappa > self.Lambda:
            raise ConfigError(f"kappa={self.kappa} exceeds Lambda={self.Lambda}")
        if self.q is not None and not self.q > self.dim:
            raise ConfigError(f"weight exponent q={self.q} must exceed dim={self.dim}")
        if not 0 <= self.T0 < self.horizon:
            raise ConfigError("T0 must lie in [0, T)")
        if self.p0 is not None and not self.p0 > 2:
            raise ConfigError("p0 must exceed 2")

    # -- evaluation ---------------------------------------------------------
    @property
    def n_brownian(self) -> int:
        return len(self.vol[0])

    @property
    def mu_total(self) -> float:
        return float(sum(m.intensity for m in self.marks))

    @property
    def weight_q(self) -> float:
        return float(self.dim + 1) if self.q is None else float(self.q)

    @property
    def is_homogeneous(self) -> bool:
        """True when eta, lambda and every gamma are constants."""
        return (self.eta.is_constant and self.lam.is_constant
                and all(is_inf(m.gamma) or m.gamma.is_constant for m in self.marks))

    def b(self, t, y) -> np.ndarray:
        return np.stack([c(t, y) for c in self.drift], axis=-1)

    def sigma(self, t, y) -> np.ndarray:
        return np.stack([np.stack([c(t, y) for c in row], axis=-1) for row in self.vol], axis=-2)

    def diffusion(self, t, y) -> np.ndarray:
        s = self.sigma(t, y)
        return s @ np.swapaxes(s, -1, -2)

    def eta_at(self, t, y) -> np.ndarray:
        return self.eta(t, y)

    def lam_at(self, t, y) -> np.ndarray:
        return self.lam(t, y)

    def gammas_at(self, t, y) -> list:
        """Per-mark gamma values: an array, or ``INF`` for marks without crossing."""
        return [INF if is_inf(m.gamma) else m.gamma(t, y) for m in self.marks]

    @property
    def intensities(self) -> np.ndarray:
        return np.array([m.intensity for m in self.marks], dtype=float)

    # -- bookkeeping ----------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "dynamics": {
                "horizon": self.horizon,
                "dim": self.dim,
                "drift": [c.to_dict() for c in self.drift],
                "vol": [[c.to_dict() for c in row] for row in self.vol],
            },
            "costs": {"eta": self.eta.to_dict(), "lambda": self.lam.to_dict()},
            "jumps": {"marks": [m.to_dict() for m in self.marks]},
            "bounds": {"Lambda": self.Lambda, "kappa": self.kappa, "L": self.L},
            "numerics": {"q": self.q, "T0": self.T0, "p0": self.p0},
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=to_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_costs(self, eta=None, lam=None, gammas: Sequence | None = None) -> "ProblemSpec":
        """Copy with some cost coefficients replaced; jump intensities are kept."""
        marks = self.marks
        if gammas is not None:
            if len(gammas) != len(self.marks):
                raise ConfigError("one gamma per jump mark required")
            marks = tuple(JumpMark(m.intensity, g) for m, g in zip(self.marks, gammas))
        return replace(self, eta=eta if eta is not None else self.eta,
                       lam=lam if lam is not None else self.lam, marks=marks)


def spec_from_dict(data: dict[str, Any]) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from the ``problem`` config mapping."""
    try:
        dyn, costs = data["dynamics"], data["costs"]
        bounds = data["bounds"]
    except KeyError as exc:
        raise ConfigError(f"problem section missing {exc.args[0]!r}") from None
    jumps = data.get("jumps") or {}
    numerics = data.get("numerics") or {}
    dim = int(dyn.get("dim", 1))
    vol = dyn["vol"]
    if not isinstance(vol, list):
        vol = [[vol]]
    elif vol and not isinstance(vol[0], list):
        vol = [vol] if dim == 1 else [[v] for v in vol]
    drift = dyn["drift"]
    if not isinstance(drift, list):
        drift = [drift]
    marks = []
    for mark in jumps.get("marks", []) or []:
        gamma = mark["gamma"]
        try:
            g = parse_extended(gamma)
        except (TypeError, ValueError):
            g = None
        if is_inf(g):
            gamma = INF
        elif g is not None:
            gamma = Constant(float(g))
        else:
            gamma = coefficient_from_dict(gamma)
        marks.append(JumpMark(float(mark["intensity"]), gamma))
    return ProblemSpec(
        horizon=float(dyn["horizon"]),
        dim=dim,
        drift=tuple(coefficient_from_dict(c) for c in drift),
        vol=tuple(tuple(coefficient_from_dict(c) for c in row) for row in vol),
        eta=coefficient_from_dict(costs["eta"]),
        lam=coefficient_from_dict(costs["lambda"]),
        marks=tuple(marks),
        Lambda=float(bounds["Lambda"]),
        kappa=float(bounds["kappa"]),
        L=None if bounds.get("L") is None else float(bounds["L"]),
        q=None if numerics.get("q") is None else float(numerics["q"]),
        T0=float(numerics.get("T0", 0.0)),
        p0=None if numerics.get("p0") is None else float(numerics["p0"]),
    )


def homogeneous_spec(horizon: float, eta: float, lam: float, marks: Sequence[tuple[float, Any]] = (),
                     *, Lambda: float | None = None, kappa: float | None = None,
                     sigma: float = 0.0, drift: float = 0.0, dim: int = 1) -> ProblemSpec:
    """Shortcut for spatially constant cost coefficients; ``marks`` holds ``(mu_k, gamma_k)``."""
    jm = tuple(JumpMark(float(mu), INF if is_inf(g) else Constant(float(g))) for mu, g in marks)
    Lambda = max(eta, lam, abs(sigma), abs(drift)) if Lambda is None else Lambda
    return ProblemSpec(
        horizon=horizon, dim=dim,
        drift=tuple(Constant(drift) for _ in range(dim)),
        vol=tuple(tuple(Constant(sigma if i == j else 0.0) for j in range(dim)) for i in range(dim)),
        eta=Constant(eta), lam=Constant(lam), marks=jm,
        Lambda=float(Lambda), kappa=float(eta if kappa is None else kappa),
    )


# ---------------------------------------------------------------------------
# driver and weight
# ---------------------------------------------------------------------------

def driver_values(r, eta, lam, intensities, gammas) -> np.ndarray:
    """``F`` from already evaluated coefficient arrays.

    ``gammas`` holds one array or ``INF`` per mark; ``INF`` marks drop out,
    and ``gamma = 0`` marks contribute ``-mu * r``.
    """
    r = np.asarray(r, dtype=float)
    out = lam - r * r / eta
    for mu, g in zip(intensities, gammas):
        if is_inf(g):
            continue
        den = g + r
        out = out - mu * np.divide(r * r, den, out=np.zeros(np.broadcast(r, den).shape), where=den > 0)
    return out


def driver_F(spec: ProblemSpec, t, y, r) -> np.ndarray:
    """``F(t, y, r) = -sum_k mu_k r^2/(gamma_k + r) - r^2/eta + lambda`` for ``r >= 0``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("driver_F is defined for r >= 0; pass |r| for the truncated equation")
    y = np.asarray(y, dtype=float)
    return driver_values(r, spec.eta_at(t, y), spec.lam_at(t, y), spec.intensities, spec.gammas_at(t, y))


def _as_points(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y[..., None] if y.ndim == 0 else y


def weight_theta(y, q: float) -> np.ndarray:
    """``theta(y) = (1 + |y|^2)^(-q)``; ``y`` has shape ``(..., d)``, a scalar means ``d = 1``."""
    y = _as_points(y)
    d = y.shape[-1]
    if not q > d:
        raise ConfigError(f"weight exponent q={q} must exceed the dimension d={d}")
    return (1.0 + np.sum(y * y, axis=-1)) ** (-q)


def inverse_weight(y, q: float) -> np.ndarray:
    y = _as_points(y)
    return (1.0 + np.sum(y * y, axis=-1)) ** q


def weight_gradient(y, q: float) -> np.ndarray:
    """Analytic ``D theta``, shape ``(..., d)``."""
    y = _as_points(y)
    r2 = 1.0 + np.sum(y * y, axis=-1)
    return (-2.0 * q * r2 ** (-q - 1.0))[..., None] * y


def transformed_coeffs(spec: ProblemSpec, q: float, t, y):
    """Coefficients ``(b_tilde, beta, c)`` of the equation for ``v = theta * u``.

    Shapes: ``(..., d)``, ``(..., m)`` and ``(...)``.
    """
    y = _as_points(y)
    if not q > spec.dim:
        raise ConfigError(f"weight exponent q={q} must exceed dim={spec.dim}")
    b = spec.b(t, y)
    s = spec.sigma(t, y)
    a = s @ np.swapaxes(s, -1, -2)
    inv = 1.0 / (1.0 + np.sum(y * y, axis=-1))
    ay = np.einsum("...ij,...j->...i", a, y)
    b_tilde = b + 2.0 * q * inv[..., None] * ay
    beta = 2.0 * q * inv[..., None] * np.einsum("...jr,...j->...r", s, y)
    trace = np.trace(a, axis1=-2, axis2=-1)
    c = q * inv * (trace + 2.0 * np.sum(y * b, axis=-1)
                   + 2.0 * (q - 1.0) * inv * np.sum(y * ay, axis=-1))
    return b_tilde, beta, c


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleGrid:
    """Points ``(t_i, y_j)`` on which assumptions are checked; ``points`` is ``(n, d)``."""

    times: np.ndarray
    points: np.ndarray
    spacing: float

    @classmethod
    def box(cls, spec: ProblemSpec, lower: float, upper: float, n_t: int = 17, n_y: int = 33):
        if not upper > lower or n_t < 1 or n_y < 3:
            raise ConfigError("sample box must be nonempty with n_y >= 3")
        axis = np.linspace(lower, upper, n_y)
        mesh = np.stack(np.meshgrid(*([axis] * spec.dim), indexing="ij"), axis=-1)
        return cls(np.linspace(0.0, spec.horizon, n_t), mesh.reshape(-1, spec.dim), axis[1] - axis[0])


@dataclass(frozen=True)
class H3Report:
    T0: float
    p0: float | None
    inf_eta: float
    sup_eta: float
    satisfied: bool
    largest_p0: float  # math.inf when eta is constant on the window

    def to_dict(self):
        return {"T0": self.T0, "p0": self.p0, "inf_eta": self.inf_eta, "sup_eta": self.sup_eta,
                "satisfied": self.satisfied,
                "largest_p0": None if math.isinf(self.largest_p0) else self.largest_p0,
                "largest_p0_unbounded": math.isinf(self.largest_p0)}


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    observed: float
    limit: float | None
    witness: dict[str, Any] = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "observed": self.observed,
                "limit": self.limit, "witness": self.witness}


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[AssumptionCheck, ...]
    h3: H3Report

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks) and self.h3.satisfied

    def failures(self) -> list[str]:
        out = [c.name for c in self.checks if not c.passed]
        if not self.h3.satisfied:
            out.append("H3")
        return out

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks],
                "H3": self.h3.to_dict()}

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            lim = "" if c.limit is None else f" (limit {c.limit:.6g})"
            wit = ", ".join(f"{k}={v}" for k, v in c.witness.items())
            lines.append(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.observed:.6g}{lim} at {wit}")
        h = self.h3
        lp = "unbounded" if math.isinf(h.largest_p0) else f"{h.largest_p0:.6g}"
        lines.append(f"[{'PASS' if h.satisfied else 'FAIL'}] H3: inf eta={h.inf_eta:.6g}, "
                     f"sup eta={h.sup_eta:.6g} on [{h.T0}, T], largest p0={lp}")
        return "\n".join(lines)


def h3_report(T0: float, inf_eta: float, sup_eta: float, p0: float | None) -> H3Report:
    ratio = inf_eta / sup_eta
    largest = math.inf if ratio >= 1.0 else 1.0 / (2.0 * (1.0 - ratio))
    if p0 is None:
        ok = largest > 2.0
    else:
        ok = p0 > 2.0 and inf_eta >= (1.0 - 1.0 / (2.0 * p0)) * sup_eta
    return H3Report(T0, p0, inf_eta, sup_eta, bool(ok), largest)


def _witness(times, points, flat_index, shape):
    it, iy = np.unravel_index(flat_index, shape)
    return {"t": float(times[it]), "y": [float(v) for v in points[iy]]}


def validate_spec(spec: ProblemSpec, sample_grid: SampleGrid) -> ValidationReport:
    """Check boundedness, positivity, derivative bounds and the impact-ratio window.

    Raises :class:`AssumptionError` naming ``(t, y)`` if a coefficient is not
    finite at a sample.
    """
    times, pts = np.asarray(sample_grid.times, float), np.asarray(sample_grid.points, float)
    if times.size == 0 or pts.size == 0:
        raise ConfigError("sample grid is empty")
    tt = times[:, None]
    yy = pts[None, :, :]
    shape = (times.size, pts.shape[0])

    values = {
        "b": np.linalg.norm(spec.b(tt, yy), axis=-1),
        "sigma": np.linalg.norm(spec.sigma(tt, yy), axis=(-2, -1)),
        "eta": spec.eta_at(tt, yy),
        "lambda": spec.lam_at(tt, yy),
    }
    gammas = [g if is_inf(g) else np.broadcast_to(g, shape) for g in spec.gammas_at(tt, yy)]
    for name, arr in [*values.items(), *((f"gamma[{k}]", g) for k, g in enumerate(gammas) if not is_inf(g))]:
        bad = ~np.isfinite(arr)
        if bad.any():
            w = _witness(times, pts, int(np.flatnonzero(bad)[0]), shape)
            raise AssumptionError(f"coefficient {name} is not finite at t={w['t']}, y={w['y']}")

    checks = []
    eta = values["eta"]
    i = int(np.argmin(eta))
    checks.append(AssumptionCheck("H1.eta_lower", bool(eta.flat[i] >= spec.kappa), float(eta.flat[i]),
                                  spec.kappa, _witness(times, pts, i, shape)))
    for name in ("b", "sigma", "eta", "lambda"):
        arr = values[name]
        i = int(np.argmax(arr))
        checks.append(AssumptionCheck(f"H1.{name}_bound", bool(arr.flat[i] <= spec.Lambda),
                                      float(arr.flat[i]), spec.Lambda, _witness(times, pts, i, shape)))
    lam = values["lambda"]
    i = int(np.argmin(lam))
    checks.append(AssumptionCheck("H1.lambda_nonneg", bool(lam.flat[i] >= 0), float(lam.flat[i]), 0.0,
                                  _witness(times, pts, i, shape)))
    for k, g in enumerate(gammas):
        if is_inf(g):
            continue
        i = int(np.argmin(g))
        checks.append(AssumptionCheck(f"H1.gamma[{k}]_nonneg", bool(g.flat[i] >= 0), float(g.flat[i]),
                                      0.0, _witness(times, pts, i, shape)))
    for k, m in enumerate(spec.marks):
        checks.append(AssumptionCheck(f"H1.mu[{k}]_positive", m.intensity > 0, m.intensity, 0.0, {}))

    checks.extend(_derivative_checks(spec, times, pts, sample_grid.spacing))

    window = times >= spec.T0
    if not window.any():
        window = times == times.max()
    eta_w = eta[window]
    checks_t = tuple(checks)
    return ValidationReport(checks_t, h3_report(spec.T0, float(eta_w.min()), float(eta_w.max()), spec.p0))


def _derivative_checks(spec: ProblemSpec, times, pts, spacing) -> list[AssumptionCheck]:
    """Centered finite-difference estimates of the spatial derivative bounds."""
    h = 0.5 * spacing
    tt = times[:, None]
    shape = (times.size, pts.shape[0])
    first: dict[str, np.ndarray] = {}
    second = np.zeros(shape)
    for e in range(spec.dim):
        step = np.zeros(spec.dim)
        step[e] = h
        yp, ym, y0 = (pts + step)[None], (pts - step)[None], pts[None]
        for name, fn in (("b", lambda y: spec.b(tt, y)), ("eta", lambda y: spec.eta_at(tt, y)[..., None]),
                         ("lambda", lambda y: spec.lam_at(tt, y)[..., None]),
                         ("sigma", lambda y: spec.sigma(tt, y).reshape(*shape, -1))):
            d1 = np.max(np.abs(fn(yp) - fn(ym)) / (2 * h), axis=-1)
            first[name] = np.maximum(first.get(name, np.zeros(shape)), d1)
        s0 = spec.sigma(tt, y0).reshape(*shape, -1)
        sp = spec.sigma(tt, yp).reshape(*shape, -1)
        sm = spec.sigma(tt, ym).reshape(*shape, -1)
        second = np.maximum(second, np.max(np.abs(sp - 2 * s0 + sm) / h ** 2, axis=-1))
    out = []
    for name, arr in [*first.items(), ("sigma_second", second)]:
        i = int(np.argmax(arr))
        obs = float(arr.flat[i])
        passed = np.isfinite(obs) and (spec.L is None or obs <= spec.L * (1 + 1e-9))
        out.append(AssumptionCheck(f"H2.{name}", bool(passed), obs, spec.L, _witness(times, pts, i, shape)))
    return out
