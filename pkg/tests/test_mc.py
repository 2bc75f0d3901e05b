import math

import numpy as np
import pytest

from singular_liquidation import INF, DomainError, homogeneous_spec
from singular_liquidation.control import FeedbackPolicy, TWAPPolicy
from singular_liquidation.errors import AcceptanceError, InputError
from singular_liquidation.mc import (TERMS, CostEstimate, bsde_residual, check_liquidation,
                                     check_monotone_paths, compare_policies, estimate_value, run_ensemble,
                                     value_identity)
from singular_liquidation.pde import ValueSurface
from singular_liquidation.riccati import (HomogeneousSpec, closed_form_lower, closed_form_upper, riccati_pure,
                                          solve_homogeneous_ode)
from singular_liquidation.scenarios import lower_family, upper_family, y_dependent

T = 1.0


def _surface(times, values, truncation, axis=(-4.0, 4.0), n_y=9):
    times = np.asarray(times, dtype=float)
    ax = np.linspace(*axis, n_y)
    vals = np.repeat(np.asarray(values, dtype=float).reshape(-1, 1), ax.size, axis=1)
    return ValueSurface(times, (ax,), vals, np.zeros(vals.shape + (1,)), truncation)


def _lower_surface(N, n_t=201, **kw):
    t = np.linspace(0, T, n_t)
    return _surface(t, closed_form_lower(1.0, 1.0, N, t, T), N, **kw)


# -- estimator basics -----------------------------------------------------------

def test_zero_position_costs_nothing():
    spec = y_dependent()
    est = estimate_value(spec, FeedbackPolicy(_lower_surface(10.0), spec), 0.0, 0.0, 200, seed=1)
    assert est.mean == 0.0 and est.stderr == 0.0
    assert est.n_paths == 200 and est.discarded == 0


def test_breakdown_sums_to_mean():
    spec = y_dependent()
    est = estimate_value(spec, FeedbackPolicy(_lower_surface(10.0), spec), 1.0, 0.0, 500, seed=2)
    assert sum(est.breakdown.values()) == pytest.approx(est.mean, rel=1e-12)
    assert set(est.breakdown) == set(TERMS)
    assert est.stderr == pytest.approx(np.std(est.samples, ddof=1) / math.sqrt(est.n_paths), rel=1e-10)


def test_stderr_scales_like_sqrt_n():
    spec = y_dependent()
    pol = FeedbackPolicy(_lower_surface(10.0, n_t=51), spec)
    a = estimate_value(spec, pol, 1.0, 0.0, 4000, seed=3)
    b = estimate_value(spec, pol, 1.0, 0.0, 8000, seed=4)
    assert a.stderr / b.stderr == pytest.approx(math.sqrt(2), rel=0.15)


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    terms = {k: rng.exponential(size=1000) for k in TERMS}
    perm = rng.permutation(1000)
    a = CostEstimate.from_samples(terms, 0)
    b = CostEstimate.from_samples({k: v[perm] for k, v in terms.items()}, 0)
    assert a.mean == b.mean
    assert a.stderr == pytest.approx(b.stderr, rel=1e-13)


def test_worker_count_does_not_change_results():
    spec = y_dependent()
    pol = FeedbackPolicy(_lower_surface(10.0, n_t=51), spec)
    a = estimate_value(spec, pol, 1.0, 0.0, 2500, seed=5, workers=1)
    b = estimate_value(spec, pol, 1.0, 0.0, 2500, seed=5, workers=3)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.to_dict() == b.to_dict()


def test_estimate_value_errors():
    spec = y_dependent()
    pol = FeedbackPolicy(_lower_surface(10.0), spec)
    with pytest.raises(InputError):
        estimate_value(spec, pol, 1.0, 0.0, 99)
    with pytest.raises(InputError):
        estimate_value(spec, pol, 1.0, 0.0, 100, mode="robust")
    with pytest.raises(InputError):
        estimate_value(spec, TWAPPolicy(1.0, T, 2), 1.0, 0.0, 100)
    lim = FeedbackPolicy(_surface(np.linspace(0, 0.99, 11), np.ones(11), INF), spec)
    with pytest.raises(InputError):
        estimate_value(spec, lim, 1.0, 0.0, 100)


def test_box_exits_escalate_in_acceptance_mode():
    spec = homogeneous_spec(T, 1.0, 0.0, Lambda=1.0, sigma=2.0)
    narrow = _surface(np.linspace(0, T, 21), np.ones(21), 10.0, axis=(-0.2, 0.2))
    pol = FeedbackPolicy(narrow, spec)
    est = estimate_value(spec, pol, 1.0, 0.0, 200, seed=0)
    assert est.discarded > 2 and est.n_paths == 200 - est.discarded
    with pytest.raises(AcceptanceError):
        estimate_value(spec, pol, 1.0, 0.0, 200, seed=0, acceptance=True)


# -- closed-form costs ------------------------------------------------------------

def test_twap_cost_closed_form():
    eta, lam, x0 = 1.3, 0.5, 2.0
    spec = homogeneous_spec(T, eta, lam, Lambda=1.3)
    est = estimate_value(spec, TWAPPolicy(x0, T, 0), x0, 0.0, 100, N=10.0, mesh=np.linspace(0, T, 33))
    assert est.mean == pytest.approx(eta * x0 ** 2 / T + lam * x0 ** 2 * T / 3, rel=1e-12)
    assert est.stderr == 0.0


def test_feedback_beats_twap_pure_riccati():
    spec = homogeneous_spec(T, 1.0, 0.0, Lambda=1.0)
    N = 20.0
    t = np.linspace(0, T, 401)
    surf = _surface(t, riccati_pure(1.0, N, t, T), N)
    table = compare_policies(spec, surf, 1.0, 0.0, 200, seed=0)
    assert table.passed
    assert table.reference.mean == pytest.approx(riccati_pure(1.0, N, 0.0, T), rel=1e-4)
    twap = next(r for r in table.rows if r.policy == "twap")
    assert twap.estimate.mean == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(InputError):
        compare_policies(spec, _surface(t[:-4], np.ones(397), INF), 1.0, 0.0, 200)


def test_homogeneous_value_matches_closed_form():
    spec = lower_family()
    N = 10.0
    est = estimate_value(spec, FeedbackPolicy(_lower_surface(N, n_t=401), spec), 1.0, 0.0, 4000, seed=6)
    exact = closed_form_lower(1.0, 1.0, N, 0.0, T)
    assert abs(est.mean - exact) <= 3 * est.stderr + 2e-3


def test_value_identity_on_exact_surfaces():
    spec = upper_family(mu=0.0)
    N = 10.0
    t = np.linspace(0, T, 201)
    coarse = _surface(t, closed_form_upper(1.0, N, t, T), N)
    tf = np.linspace(0, T, 401)
    fine = _surface(tf, closed_form_upper(1.0, N, tf, T), N)
    rep = value_identity(spec, coarse, fine, 1.0, 0.0, 200, seed=0)
    assert rep.passed, rep.details
    assert rep.details["budget"] < 1e-3


def test_dark_pool_on_beats_off():
    spec = homogeneous_spec(T, 1.0, 0.5, [(1.0, 0.3)], Lambda=1.0)
    N = 10.0
    t = np.linspace(0, T, 201)
    g = solve_homogeneous_ode(HomogeneousSpec(T, eta=1.0, lam=0.5, mu_total=1.0, gamma=0.3, terminal_N=N), t)
    table = compare_policies(spec, _surface(t, g, N), 1.0, 0.0, 1000, seed=1)
    off = next(r for r in table.rows if r.policy == "dark pool off")
    assert off.passed and off.diff_mean > 0


# -- liquidation ---------------------------------------------------------------------

def _limit_policy(spec, eps=0.01, value=1.0):
    t = np.linspace(0, T - eps, 100)
    return FeedbackPolicy(_surface(t, np.full(t.size, value), INF), spec)


def test_liquidation_trivial_window():
    spec = upper_family(mu=0.0)
    rep = check_liquidation(spec, _limit_policy(spec), 1.0, 0.0, 100, eps=T)
    assert rep.observed == 1.0


def test_liquidation_by_full_fills():
    spec = lower_family(mu=50.0)
    rep = check_liquidation(spec, _limit_policy(spec), 1.0, 0.0, 500, eps=0.01, seed=2)
    assert rep.passed and rep.observed == 0.0


def test_liquidation_errors():
    spec = upper_family(mu=0.0)
    with pytest.raises(InputError):
        check_liquidation(spec, FeedbackPolicy(_lower_surface(10.0), spec), 1.0, 0.0, 100, eps=0.01)
    with pytest.raises(DomainError):
        check_liquidation(spec, _limit_policy(spec), 0.0, 0.0, 100, eps=0.01)


def test_monotone_paths_report():
    spec = y_dependent()
    rep = check_monotone_paths(spec, FeedbackPolicy(_lower_surface(10.0, n_t=51), spec), 1.0, 0.0, 300, seed=4)
    assert rep.passed and rep.observed == 1.0
    with pytest.raises(DomainError):
        check_monotone_paths(spec, FeedbackPolicy(_lower_surface(10.0), spec), 0.0, 0.0, 100)


# -- residual ---------------------------------------------------------------------------

def test_residual_first_order_without_noise():
    spec = upper_family(mu=0.0)
    N = 10.0
    t = np.linspace(0, T, 3201)
    surf = _surface(t, closed_form_upper(1.0, N, t, T), N)
    curve = bsde_residual(spec, surf, 50, [8, 16, 32], seed=0)
    assert 0.7 <= curve.exponent <= 1.3
    np.testing.assert_allclose(curve.spread, 0.0, atol=1e-12)


def test_residual_vanishes_for_stationary_value():
    eta, mu, gamma, u = 1.0, 0.5, 0.4, 0.8
    lam = u * u * (1 / eta + mu / (gamma + u))
    spec = homogeneous_spec(T, eta, lam, [(mu, gamma)], Lambda=2.0, sigma=0.5)
    t = np.linspace(0, T, 65)
    surf = _surface(t, np.full(t.size, u), 5.0)
    curve = bsde_residual(spec, surf, 100, [8, 16, 32], seed=1)
    np.testing.assert_allclose(curve.rms, 0.0, atol=1e-13)


def test_residual_errors():
    spec = upper_family(mu=0.0)
    t = np.linspace(0, T, 33)
    with pytest.raises(InputError):
        bsde_residual(spec, _surface(t[:-2], np.ones(31), INF), 10, [8, 16])
    with pytest.raises(InputError):
        bsde_residual(spec, _surface(t, np.ones(33), 5.0), 10, [8, 12])
    with pytest.raises(DomainError):
        bsde_residual(spec, _surface(t, np.ones(33), 5.0), 10, [8, 16], horizon=2.0)


def test_run_ensemble_shares_random_numbers():
    spec = y_dependent()
    pol = FeedbackPolicy(_lower_surface(10.0, n_t=21), spec)
    out = run_ensemble(spec, [pol, TWAPPolicy(1.0, T, 2)], 1.0, 0.0, pol.surface.times, 50, seed=3, N=10.0)
    assert set(out) == {"feedback", "twap"}
    np.testing.assert_array_equal(out["feedback"]["exited"], out["twap"]["exited"])
    assert out["twap"]["x_end"].max() < 1e-12
