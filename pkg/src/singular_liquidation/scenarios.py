"""Reference problem specifications used by tests, demos and bundled configs."""

from __future__ import annotations

from .coefficients import Affine, Clipped, Constant, Sinusoid
from .model import JumpMark, ProblemSpec, homogeneous_spec
from .sentinels import INF


def lower_family(horizon: float = 1.0, kappa: float = 1.0, mu: float = 1.0, sigma: float = 0.0,
                 Lambda: float = 1.0) -> ProblemSpec:
    """``(lambda, gamma, eta) = (0, 0, kappa)`` with one always-filling mark of intensity ``mu``."""
    return homogeneous_spec(horizon, kappa, 0.0, [(mu, 0.0)], Lambda=Lambda, kappa=kappa, sigma=sigma)


def upper_family(horizon: float = 1.0, Lambda: float = 1.0, mu: float = 1.0,
                 sigma: float = 0.0) -> ProblemSpec:
    """``(lambda, gamma, eta) = (Lambda, INF, Lambda)``; the jump mark never crosses."""
    marks = [(mu, INF)] if mu > 0 else []
    return homogeneous_spec(horizon, Lambda, Lambda, marks, Lambda=Lambda, kappa=Lambda, sigma=sigma)


def varying_eta(amplitude: float = 0.4, lower: float = 0.93, upper: float = 1.06) -> Clipped:
    """``1 + amplitude sin y`` clipped to ``[lower, upper]`` (ratio ``lower/upper`` above 7/8)."""
    return Clipped(Sinusoid(1.0, amplitude), lower, upper)


def y_dependent(horizon: float = 1.0, sigma: float = 0.3, reversion: float = 0.2,
                lam: float = 0.5) -> ProblemSpec:
    """Mean-reverting factor, state-dependent impact and two marks (one crossing, one not)."""
    return ProblemSpec(
        horizon=horizon, dim=1,
        drift=(Affine(0.0, (-reversion,)),),
        vol=((Constant(sigma),),),
        eta=varying_eta(), lam=Constant(lam),
        marks=(JumpMark(0.08, Constant(0.5)), JumpMark(0.04, INF)),
        Lambda=1.1, kappa=0.93, p0=4.0,
    )


def no_jump(horizon: float = 1.0, eta: float = 1.0, lam: float = 1.0, sigma: float = 0.3) -> ProblemSpec:
    return homogeneous_spec(horizon, eta, lam, [], Lambda=max(eta, lam, 1.0), kappa=min(eta, 1.0),
                            sigma=sigma)


def residual_diffusive(sigma: float = 1.0, amplitude: float = 0.9, frequency: float = 3.0,
                       horizon: float = 1.0) -> ProblemSpec:
    """No jumps, oscillating risk aversion: the value varies in ``y`` so diffusion matters."""
    return ProblemSpec(
        horizon=horizon, dim=1, drift=(Constant(0.0),), vol=((Constant(sigma),),),
        eta=Constant(1.0), lam=Sinusoid(1.0, amplitude, frequency), marks=(),
        Lambda=max(1.0 + amplitude, abs(sigma), 1.0), kappa=1.0,
    )
