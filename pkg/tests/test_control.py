import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_liquidation import INF, DomainError, homogeneous_spec
from singular_liquidation.control import (FeedbackPolicy, PathRecord, TWAPPolicy, aggregate_increments,
                                          block_streams, brownian_increments, check_state_monotone,
                                          dark_pool_off, draw_jumps, evaluate_cost, feedback, scaled,
                                          simulate_batch, simulate_factor, simulate_state, state_decay_bound,
                                          write_paths_csv)
from singular_liquidation.errors import InputError
from singular_liquidation.pde import ValueSurface
from singular_liquidation.riccati import coth_solution
from singular_liquidation.scenarios import lower_family, upper_family, y_dependent

T = 1.0


def _surface(times, values, truncation=10.0, axis=(-4.0, 4.0)):
    """Surface constant in ``y`` with the given time profile."""
    times = np.asarray(times, dtype=float)
    ax = np.linspace(*axis, 5)
    vals = np.repeat(np.asarray(values, dtype=float).reshape(-1, 1), ax.size, axis=1)
    return ValueSurface(times, (ax,), vals, np.zeros(vals.shape + (1,)), truncation)


def _flat(c, n=11):
    return _surface(np.linspace(0, T, n), np.full(n, c))


class _Idle:
    name = "idle"

    def coefficients(self, t, y):
        n = np.atleast_2d(y).shape[0]
        return np.zeros(n), np.zeros(n), np.zeros((n, 1))


def _no_jumps(n):
    return draw_jumps(np.random.default_rng(0), n, np.zeros(1), T)


# -- feedback -----------------------------------------------------------------

def test_feedback_trivial_cases():
    spec = homogeneous_spec(T, 1.0, 0.0, [(1.0, 0.0), (0.5, INF)], Lambda=1.0)
    pol = FeedbackPolicy(_flat(1.0), spec)
    xi, rho = feedback(pol, 0.3, 2.5, [0.0])
    assert xi == pytest.approx(2.5)  # u = eta
    assert rho == [pytest.approx(2.5), 0.0]  # gamma = 0 fills fully, INF never
    assert feedback(pol, 0.3, 0.0, [0.0]) == (0.0, [0.0, 0.0])
    assert feedback(dark_pool_off(pol), 0.3, 1.0, [0.0])[1] == [0.0, 0.0]
    assert feedback(scaled(pol, 1.5), 0.3, 1.0, [0.0])[0] == pytest.approx(1.5)


def test_feedback_finite_gamma_fraction():
    spec = homogeneous_spec(T, 2.0, 0.0, [(1.0, 0.5)], Lambda=2.0)
    xi, rho = feedback(FeedbackPolicy(_flat(1.5), spec), 0.0, 1.0, [0.0])
    assert xi == pytest.approx(0.75)
    assert rho[0] == pytest.approx(1.5 / 2.0)


def test_feedback_beyond_limit_cutoff():
    spec = upper_family(mu=0.0)
    t = np.linspace(0, 0.99, 12)
    lim = _surface(t, coth_solution(1.0, t, T), truncation=INF)
    pol = FeedbackPolicy(lim, spec)
    feedback(pol, 0.99, 1.0, [0.0])
    with pytest.raises(DomainError):
        feedback(pol, 0.995, 1.0, [0.0])


@settings(max_examples=50)
@given(st.floats(0.0, 50.0), st.floats(0.0, 10.0), st.floats(-3.0, 3.0), st.floats(0.0, 1.0))
def test_feedback_signs(u, x, y, t):
    spec = y_dependent()
    pol = FeedbackPolicy(_flat(u), spec)
    xi, rho = feedback(pol, t, x, [y])
    assert xi >= 0
    assert all(0 <= r <= x * (1 + 1e-15) for r in rho)


# -- random inputs and the factor ---------------------------------------------

def test_brownian_increment_variance():
    mesh = np.array([0.0, 0.01, 0.05])
    dW = brownian_increments(np.random.default_rng(1), 100_000, mesh, 1)
    dt = np.diff(mesh)
    sigma = 0.3
    inc = sigma * dW[:, :, 0]
    var = inc.var(axis=0, ddof=1)
    # stderr of a normal sample variance is var sqrt(2/(n-1))
    se = sigma ** 2 * dt * math.sqrt(2 / (inc.shape[0] - 1))
    assert np.all(np.abs(var - sigma ** 2 * dt) <= 3 * se)


def test_factor_constant_and_linear_paths():
    mesh = np.linspace(0, T, 17)
    flat = homogeneous_spec(T, 1.0, 0.0, drift=0.0, sigma=0.0)
    y, exited = simulate_factor(flat, [0.4], mesh, seed=0, n_paths=3)
    np.testing.assert_array_equal(y, 0.4)
    assert not exited.any()
    ramp = homogeneous_spec(T, 1.0, 0.0, drift=1.0, sigma=0.0)
    y, _ = simulate_factor(ramp, [0.0], mesh, seed=0)
    np.testing.assert_allclose(y[0, :, 0], mesh, atol=1e-15)


def test_factor_exit_flag_and_errors():
    spec = homogeneous_spec(T, 1.0, 0.0, drift=5.0, sigma=0.0)
    _, exited = simulate_factor(spec, [0.0], np.linspace(0, T, 5), seed=0, box=[(-1.0, 1.0)])
    assert exited.all()
    with pytest.raises(InputError):
        simulate_factor(spec, [0.0], [0.0, 0.5, 0.4], seed=0)
    with pytest.raises(InputError):
        simulate_factor(spec, [0.0], [0.0, 2.0], seed=0)
    with pytest.raises(InputError):
        simulate_factor(spec, [0.0], [0.0, 1.0])


def test_aggregated_increments_sum():
    fine = np.linspace(0, T, 9)
    dW = brownian_increments(np.random.default_rng(2), 4, fine, 1)
    coarse = fine[::2]
    agg = aggregate_increments(dW, fine, coarse)
    np.testing.assert_allclose(agg[:, 0], dW[:, 0] + dW[:, 1])
    with pytest.raises(InputError):
        aggregate_increments(dW, fine, np.array([0.0, 0.3, 1.0]))


def test_block_streams_are_distinct_and_reproducible():
    a1, _ = block_streams(5, 0)
    a2, _ = block_streams(5, 0)
    b, _ = block_streams(5, 1)
    x = a1.standard_normal(4)
    np.testing.assert_array_equal(x, a2.standard_normal(4))
    assert not np.array_equal(x, b.standard_normal(4))


def test_jump_counts_match_intensity():
    ev = draw_jumps(np.random.default_rng(3), 20_000, np.array([0.8, 0.4]), 2.0)
    counts = np.array([t.size for t in ev.times])
    assert counts.mean() == pytest.approx(2.4, abs=3 * math.sqrt(2.4 / counts.size))
    marks = np.concatenate(ev.marks)
    assert np.mean(marks == 0) == pytest.approx(2 / 3, abs=0.01)
    assert all(np.all(np.diff(t) >= 0) and np.all((t >= 0) & (t <= 2.0)) for t in ev.times[:200])


# -- state paths --------------------------------------------------------------

def test_exact_exponential_decay():
    c = 1.7
    spec = homogeneous_spec(T, 1.0, 0.0, Lambda=2.0)
    mesh = np.linspace(0, T, 9)
    rec = simulate_state(spec, FeedbackPolicy(_flat(c), spec), None, 2.0, seed=0, mesh=mesh)
    np.testing.assert_allclose(rec.x, 2.0 * np.exp(-c * mesh), rtol=1e-13)
    # impact = int eta (c x)^2 dt in closed form
    assert rec.costs["impact"] == pytest.approx(4.0 * c * (1 - math.exp(-2 * c * T)) / 2, rel=1e-12)
    assert rec.events == ()


def test_zero_rate_fills_everything_at_first_jump():
    spec = lower_family(mu=5.0)
    mesh = np.linspace(0, T, 21)
    rec = simulate_state(spec, FeedbackPolicy(_flat(1e-9), spec), None, 1.0, seed=4, mesh=mesh)
    assert rec.events, "expected a jump with intensity 5"
    t, k, rho, x_minus = rec.events[0]
    assert rho == pytest.approx(x_minus)
    assert rec.x_end == 0.0
    assert all(e[2] == 0.0 for e in rec.events[1:])


def test_costs_add_over_intervals():
    spec = homogeneous_spec(T, 0.8, 0.6, [(0.7, 0.4)], Lambda=1.0, sigma=0.2)
    pol = FeedbackPolicy(_flat(1.3), spec)
    mesh = np.linspace(0, T, 21)
    gw, _ = block_streams(9, 0)
    dW = brownian_increments(gw, 5, mesh, 1)
    full = simulate_batch(spec, pol, 1.0, [0.0], mesh, dW=dW, jumps=_no_jumps(5))
    first = simulate_batch(spec, pol, 1.0, [0.0], mesh[:11], dW=dW[:, :10], jumps=_no_jumps(5))
    tail = [simulate_batch(spec, pol, first.x[p, -1], first.y[p, -1], mesh[10:], dW=dW[p:p + 1, 10:],
                           jumps=_no_jumps(1)) for p in range(5)]
    for name in ("impact", "risk", "dark"):
        recomputed = getattr(first, name) + np.array([getattr(r, name)[0] for r in tail])
        np.testing.assert_allclose(getattr(full, name), recomputed, rtol=1e-12)
    np.testing.assert_allclose(full.x_end, [r.x_end[0] for r in tail], rtol=1e-12)


def test_scaling_x0_scales_paths_and_costs():
    spec = y_dependent()
    pol = FeedbackPolicy(_flat(0.9), spec)
    mesh = np.linspace(0, T, 41)
    for seed in range(5):
        a = simulate_state(spec, pol, None, 1.0, seed=seed, mesh=mesh)
        b = simulate_state(spec, pol, None, 3.0, seed=seed, mesh=mesh)
        np.testing.assert_allclose(b.x, 3.0 * a.x, rtol=1e-12)
        ca = evaluate_cost(spec, a, N=10.0)
        cb = evaluate_cost(spec, b, N=10.0)
        assert cb.total == pytest.approx(9.0 * ca.total, rel=1e-12)


def test_same_seed_same_record():
    spec = y_dependent()
    pol = FeedbackPolicy(_flat(0.9), spec)
    mesh = np.linspace(0, T, 41)
    a = simulate_state(spec, pol, None, 1.0, seed=12, mesh=mesh)
    b = simulate_state(spec, pol, None, 1.0, seed=12, mesh=mesh)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.events == b.events and a.costs == b.costs


def test_given_factor_path_is_followed():
    spec = y_dependent()
    mesh = np.linspace(0, T, 21)
    y, _ = simulate_factor(spec, [0.2], mesh, seed=3)
    rec = simulate_state(spec, FeedbackPolicy(_flat(0.9), spec), y[0], 1.0, seed=3, mesh=mesh)
    np.testing.assert_allclose(rec.y, y[0], atol=1e-12)
    with pytest.raises(InputError):
        simulate_state(spec, FeedbackPolicy(_flat(0.9), spec), y[0], 1.0, seed=3, mesh=mesh[:-1])


def test_twap_is_linear():
    spec = homogeneous_spec(T, 1.0, 0.0, Lambda=1.0)
    mesh = np.linspace(0, T, 11)
    rec = simulate_state(spec, TWAPPolicy(2.0, T, 0), None, 2.0, seed=0, mesh=mesh)
    np.testing.assert_allclose(rec.x, 2.0 * (1 - mesh), atol=1e-14)
    assert rec.costs["impact"] == pytest.approx(4.0, rel=1e-12)


# -- costs --------------------------------------------------------------------

def test_evaluate_cost_modes():
    spec = homogeneous_spec(T, 1.0, 0.0, [(0.5, 0.0)], Lambda=1.0)
    rec = simulate_state(spec, _Idle(), None, 1.5, seed=0, mesh=np.linspace(0, T, 5))
    pen = evaluate_cost(spec, rec, "penalized", N=4.0)
    assert pen.running == 0.0 and pen.x_end == 1.5
    assert pen.total == pytest.approx(4.0 * 1.5 ** 2)
    assert pen.breakdown["penalty"] == pen.penalty
    con = evaluate_cost(spec, rec, "constrained", tol=1e-3)
    assert con.total == 0.0 and con.constraint_ok is False
    zero = simulate_state(spec, FeedbackPolicy(_flat(1.0), spec), None, 0.0, seed=0, mesh=np.linspace(0, T, 5))
    assert evaluate_cost(spec, zero, N=10.0).total == 0.0


def test_evaluate_cost_breakdown_sums():
    spec = y_dependent()
    rec = simulate_state(spec, FeedbackPolicy(_flat(0.9), spec), None, 1.0, seed=1, mesh=np.linspace(0, T, 41))
    res = evaluate_cost(spec, rec, N=10.0)
    assert all(v >= 0 for v in rec.costs.values())
    assert sum(res.breakdown.values()) == pytest.approx(res.total, rel=1e-14)
    ev = evaluate_cost(spec, rec, N=10.0, dark="events")
    assert ev.breakdown["dark"] == rec.costs["dark_events"]


def test_evaluate_cost_errors():
    spec = upper_family()
    rec = simulate_state(spec, _Idle(), None, 1.0, seed=0, mesh=np.linspace(0, T, 3))
    with pytest.raises(InputError):
        evaluate_cost(spec, rec, "penalized")
    with pytest.raises(InputError):
        evaluate_cost(spec, rec, "penalized", N=INF)
    with pytest.raises(InputError):
        evaluate_cost(spec, rec, "constrained", tol=0.0)
    with pytest.raises(InputError):
        evaluate_cost(spec, rec, "other", N=1.0)
    with pytest.raises(InputError):
        evaluate_cost(spec, rec, N=1.0, dark="guess")


# -- path checks --------------------------------------------------------------

def _record(x, events=()):
    mesh = np.linspace(0, T, len(x))
    return PathRecord(mesh, np.zeros((len(x), 1)), np.asarray(x, float), tuple(events),
                      {"impact": 0.0, "risk": 0.0, "dark": 0.0, "dark_events": 0.0}, float(x[-1]), None,
                      False, float(x[0]))


def test_state_monotone_checks():
    assert check_state_monotone(_record([1.0, 0.8, 0.8, 0.1])) == (True, None)
    assert check_state_monotone(_record([1.0, 0.7, 0.9, 0.1])) == (False, 2)
    assert check_state_monotone(_record([0.0, 0.0, 0.0])) == (True, None)
    ok, idx = check_state_monotone(_record([1.0, 0.5, 0.4], [(0.6, 0, -0.1, 0.5)]))
    assert not ok and idx == 2  # first knot after the offending fill


def test_feedback_paths_are_monotone():
    spec = y_dependent()
    pol = FeedbackPolicy(_flat(2.0), spec)
    mesh = np.linspace(0, T, 21)
    for seed in range(20):
        assert check_state_monotone(simulate_state(spec, pol, None, 1.0, seed=seed, mesh=mesh))[0]


def _coth_record(eps, n=2000):
    spec = upper_family(mu=0.0)
    t = np.linspace(0, T - eps, n + 1)
    lim = _surface(t, coth_solution(1.0, t, T), truncation=INF)
    return spec, simulate_state(spec, FeedbackPolicy(lim, spec), None, 1.0, seed=0, mesh=t)


def test_coth_decay_and_bound():
    eps = 0.05
    spec, rec = _coth_record(eps)
    # x' = -coth(T - t) x integrates to sinh(T - t) / sinh(T)
    assert rec.x_end == pytest.approx(math.sinh(eps) / math.sinh(T), rel=1e-3)
    rep = state_decay_bound(rec, spec)
    assert rep.passed and rep.bound == pytest.approx(eps) and rep.exponent == 1.0


def test_decay_bound_trivial_and_negative_control():
    spec, rec = _coth_record(0.05)
    assert state_decay_bound(rec, spec, eps=T).bound == 1.0
    assert not state_decay_bound(rec, spec, c0=2.0).passed
    zero = _record([0.0, 0.0])
    with pytest.raises(DomainError):
        state_decay_bound(zero, spec)


def test_paths_csv_header(tmp_path):
    spec = y_dependent()
    mesh = np.linspace(0, T, 6)
    gw, gj = block_streams(8, 0)
    batch = simulate_batch(spec, FeedbackPolicy(_flat(0.9), spec), 1.0, [0.0], mesh,
                           dW=brownian_increments(gw, 3, mesh, 1), jumps=draw_jumps(gj, 3, spec.intensities, T),
                           seed=8)
    path = write_paths_csv(tmp_path / "paths.csv", batch, {"config": "demo"})
    lines = path.read_text().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    assert "# seed: 8" in comments and "# n_mesh: 6" in comments and "# config: demo" in comments
    rows = list(csv.reader(ln for ln in lines if not ln.startswith("#")))
    assert rows[0][:4] == ["path", "kind", "t", "y1"]
    knots = [r for r in rows[1:] if r[1] == "knot"]
    assert len(knots) == 3 * mesh.size
    assert float(knots[0][4]) == 1.0
