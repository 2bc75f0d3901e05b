"""Scalar oracles for spatially constant coefficients.

With ``eta, lambda, gamma`` constant the value surface does not depend on
``y`` and solves ``-g'(t) = F(g(t))``, ``g(T) = N``. This module holds the
explicit solutions of the two bounding coefficient sets, the ``coth`` limit,
the growth and sandwich envelopes, and a stiff ODE integrator for general
constants.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, DomainError, NumericalError
from .model import ProblemSpec
from .sentinels import INF, is_inf


@dataclass(frozen=True)
class HomogeneousSpec:
    """Constant coefficients with one common ``gamma`` for all marks."""

    horizon: float
    eta: float
    lam: float = 0.0
    mu_total: float = 0.0
    gamma: Any = INF
    terminal_N: Any = INF

    def __post_init__(self):
        if not self.horizon > 0 or not self.eta > 0:
            raise ConfigError("horizon and eta must be positive")
        if self.lam < 0 or self.mu_total < 0:
            raise ConfigError("lambda and mu_total must be nonnegative")
        if not is_inf(self.gamma) and self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        if not is_inf(self.terminal_N) and not self.terminal_N > 0:
            raise ConfigError("terminal_N must be positive")

    def driver(self, r):
        r = np.asarray(r, dtype=float)
        out = self.lam - r * r / self.eta
        if self.mu_total > 0 and not is_inf(self.gamma):
            den = self.gamma + r
            out = out - self.mu_total * np.divide(r * r, den, out=np.zeros_like(r * den), where=den > 0)
        return out

    def driver_derivative(self, r):
        r = np.asarray(r, dtype=float)
        out = -2.0 * r / self.eta
        if self.mu_total > 0 and not is_inf(self.gamma):
            g = self.gamma
            den = (g + r) ** 2
            out = out - self.mu_total * np.divide(r * r + 2 * g * r, den, out=np.ones_like(r * den),
                                                  where=den > 0)
        return out


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def _remaining(t, T):
    s = T - np.asarray(t, dtype=float)
    if np.any(s < 0):
        raise DomainError("t must not exceed T")
    return s


def closed_form_lower(kappa: float, mu_total: float, N, t, T: float):
    """Solution for ``(lambda, gamma, eta) = (0, 0, kappa)``:

        kappa mu / ((1 + kappa mu / N) exp(mu (T - t)) - 1)

    ``N = INF`` gives the singular solution ``kappa mu / expm1(mu (T - t))``.
    """
    if not mu_total > 0:
        raise DomainError("closed_form_lower needs mu_total > 0; use riccati_pure for mu = 0")
    s = _remaining(t, T)
    km = kappa * mu_total
    if is_inf(N):
        with np.errstate(divide="ignore"):
            return km / np.expm1(mu_total * s)
    if not N > 0:
        raise DomainError("N must be positive")
    # (1 + a) e^x - 1 = expm1(x) + a e^x keeps precision for small x
    return km / (np.expm1(mu_total * s) + (km / N) * np.exp(mu_total * s))


def riccati_pure(eta: float, N, t, T: float):
    """``1 / (1/N + (T - t)/eta)``, the solution of ``-g' = -g^2/eta``."""
    s = _remaining(t, T)
    inv_n = 0.0 if is_inf(N) else 1.0 / N
    with np.errstate(divide="ignore"):
        return 1.0 / (inv_n + s / eta)


def closed_form_upper(Lambda: float, N, t, T: float):
    """Solution for ``(lambda, gamma, eta) = (Lambda, INF, Lambda)``:

        2 Lambda / (1 - r exp(-2 (T - t))) - Lambda,  r = (N - Lambda)/(N + Lambda)

    ``N = INF`` reduces to ``Lambda coth(T - t)``.
    """
    s = _remaining(t, T)
    if is_inf(N):
        with np.errstate(divide="ignore"):
            return Lambda / np.tanh(s)
    if not N > Lambda:
        raise DomainError(f"closed_form_upper needs N > Lambda (N={N}, Lambda={Lambda})")
    r = (N - Lambda) / (N + Lambda)
    # 1 - r e^{-2s} = (1 - e^{-2s}) + (1 - r) e^{-2s}
    den = -np.expm1(-2.0 * s) + (1.0 - r) * np.exp(-2.0 * s)
    return 2.0 * Lambda / den - Lambda


def coth_solution(Lambda: float, t, T: float):
    """``Lambda coth(T - t)``; returns ``INF`` at ``t = T`` for scalar input."""
    s = _remaining(t, T)
    if np.ndim(s) == 0:
        if s == 0:
            return INF
        return float(Lambda / math.tanh(float(s)))
    if np.any(s == 0):
        raise DomainError("coth_solution is infinite at t = T; evaluate at t < T")
    return Lambda / np.tanh(s)


def growth_constants(spec: ProblemSpec) -> tuple[float, float]:
    """``(c0, c1) = (kappa exp(-mu T), Lambda exp(2T))``."""
    T = spec.horizon
    return spec.kappa * math.exp(-spec.mu_total * T), spec.Lambda * math.exp(2.0 * T)


def growth_envelope(spec: ProblemSpec, t):
    """``(c0/(T - t), c1/(T - t))`` for ``t < T``."""
    s = _remaining(t, spec.horizon)
    if np.any(s == 0):
        raise DomainError("growth envelope is defined for t < T")
    c0, c1 = growth_constants(spec)
    return c0 / s, c1 / s


def sandwich_envelope(spec: ProblemSpec, N, t):
    """Explicit lower and upper solutions bracketing the truncated surface ``u^N``.

    lower: the ``(0, 0, kappa)`` solution (pure Riccati when there are no jumps);
    upper: ``exp(2T) / (1/(N + Lambda) + (T - t)/Lambda)``.
    """
    T, L = spec.horizon, spec.Lambda
    if not N > L:
        raise DomainError(f"sandwich envelope needs N > Lambda (N={N}, Lambda={L})")
    s = _remaining(t, T)
    if spec.mu_total > 0:
        lower = closed_form_lower(spec.kappa, spec.mu_total, N, t, T)
    else:
        lower = riccati_pure(spec.kappa, N, t, T)
    upper = math.exp(2.0 * T) / (1.0 / (N + L) + s / L)
    return lower, upper


# ---------------------------------------------------------------------------
# ODE integrator
# ---------------------------------------------------------------------------

def solve_homogeneous_ode(hspec: HomogeneousSpec, time_grid, *, rtol: float = 1e-11,
                          atol: float = 1e-12):
    """Integrate ``-g' = F(g)`` backward from ``g(T) = N`` and evaluate on ``time_grid``.

    Uses the L-stable Radau IIA integrator in reversed time ``s = T - t``.
    """
    if is_inf(hspec.terminal_N):
        raise DomainError("solve_homogeneous_ode needs a finite terminal value")
    times = np.asarray(time_grid, dtype=float)
    T = hspec.horizon
    if times.size == 0 or not math.isclose(times.max(), T, rel_tol=0, abs_tol=1e-12 * max(T, 1)):
        raise DomainError("time grid must end at T")
    s_eval = np.unique(np.clip(T - times, 0.0, None))
    if s_eval[-1] == 0.0:
        return np.full(times.shape, float(hspec.terminal_N))
    N = float(hspec.terminal_N)
    sol = solve_ivp(
        lambda s, g: hspec.driver(g),
        (0.0, float(s_eval[-1])),
        [float(hspec.terminal_N)],
        method="Radau",
        t_eval=s_eval,
        rtol=rtol,
        atol=atol,
        jac=lambda s, g: np.atleast_2d(hspec.driver_derivative(g)),
        first_step=min(1e-6, 0.1 / N) if N > 0 else None,
    )
    if not sol.success:
        last = T - float(sol.t[-1]) if sol.t.size else T
        raise NumericalError(f"ODE integration failed ({sol.message}); last good time t={last}",
                             time=last)
    values = dict(zip(sol.t.tolist(), sol.y[0].tolist()))
    return np.array([values[float(s)] for s in np.clip(T - times, 0.0, None)])


def homogeneous_from_spec(spec: ProblemSpec, N) -> HomogeneousSpec:
    """Collapse a spec with constant costs to its scalar ODE (one common gamma)."""
    if not spec.is_homogeneous:
        raise DomainError("spec has spatially varying costs")
    y0 = np.zeros(spec.dim)
    gammas = [g if is_inf(g) else float(g) for g in spec.gammas_at(0.0, y0)]
    finite = {g for g in gammas if not is_inf(g)}
    if len(finite) > 1:
        raise DomainError("marks with different finite gamma do not reduce to one HomogeneousSpec")
    gamma = finite.pop() if finite else INF
    # marks without crossing drop out of the driver
    mu = sum(m.intensity for m, g in zip(spec.marks, gammas) if not is_inf(g))
    return HomogeneousSpec(spec.horizon, float(spec.eta_at(0.0, y0)), float(spec.lam_at(0.0, y0)),
                           mu, gamma, N)


def write_oracle_table(path: str | Path, hspec: HomogeneousSpec, spec: ProblemSpec, times) -> Path:
    """CSV with columns ``t, g, lower, upper`` (ODE value and sandwich envelope)."""
    times = np.asarray(times, dtype=float)
    g = solve_homogeneous_ode(hspec, times)
    lower, upper = sandwich_envelope(spec, hspec.terminal_N, times)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "g", "lower", "upper"])
        for row in zip(times, g, np.broadcast_to(lower, times.shape), np.broadcast_to(upper, times.shape)):
            w.writerow([repr(float(v)) for v in row])
    return path
