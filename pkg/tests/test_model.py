import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_liquidation import INF, ConfigError, DomainError, homogeneous_spec, spec_from_dict
from singular_liquidation.coefficients import (Affine, Clipped, Constant, LogisticRamp, Sinusoid,
                                               coefficient_from_dict)
from singular_liquidation.errors import AssumptionError
from singular_liquidation.model import (JumpMark, ProblemSpec, SampleGrid, driver_F, h3_report,
                                        inverse_weight, transformed_coeffs, validate_spec,
                                        weight_gradient, weight_theta)
from singular_liquidation.scenarios import lower_family, upper_family, y_dependent
from singular_liquidation.sentinels import parse_extended


def _sample(spec, lo=-3.0, hi=3.0):
    return SampleGrid.box(spec, lo, hi)


# -- coefficients and sentinels ---------------------------------------------

def test_coefficient_library_round_trips():
    for c in (Constant(1.5), Affine(0.1, (-0.2,)), Sinusoid(1.0, 0.4, 3.0, 0.5),
              LogisticRamp(1.0, 2.0, 5.0, 0.5), Clipped(Sinusoid(1.0, 0.4), 0.9, 1.1)):
        again = coefficient_from_dict(c.to_dict())
        y = np.linspace(-2, 2, 7)[:, None]
        np.testing.assert_array_equal(again(0.3, y), c(0.3, y))


def test_coefficient_errors():
    with pytest.raises(ConfigError):
        coefficient_from_dict({"kind": "cubic"})
    with pytest.raises(ConfigError):
        coefficient_from_dict({"kind": "constant", "value": 1, "bogus": 2})
    with pytest.raises(ConfigError):
        Clipped(Constant(1.0), 2.0, 1.0)


def test_inf_sentinel():
    assert parse_extended("inf") is INF
    assert parse_extended(float("inf")) is INF
    assert parse_extended(2) == 2.0
    assert INF > 1e300 and not INF < 0
    with pytest.raises(ValueError):
        parse_extended("lots")


# -- spec construction --------------------------------------------------------

def test_spec_from_dict_matches_shortcut():
    data = {"dynamics": {"horizon": 1.0, "drift": 0.0, "vol": 0.3},
            "costs": {"eta": 1.0, "lambda": 0.0},
            "jumps": {"marks": [{"intensity": 1.0, "gamma": 0.0}]},
            "bounds": {"Lambda": 1.0, "kappa": 1.0}}
    assert spec_from_dict(data).content_hash() == lower_family(sigma=0.3).content_hash()


def test_spec_rejects_bad_fields():
    with pytest.raises(ConfigError):
        homogeneous_spec(0.0, 1.0, 0.0)
    with pytest.raises(ConfigError):
        ProblemSpec(1.0, 1, (Constant(0.0),) * 2, ((Constant(0.0),),), Constant(1.0), Constant(0.0))
    with pytest.raises(ConfigError):
        homogeneous_spec(1.0, 1.0, 0.0, [(0.0, 1.0)])


def test_default_q_is_dim_plus_one():
    assert lower_family().weight_q == 2.0
    assert homogeneous_spec(1.0, 1.0, 0.0, dim=2).weight_q == 3.0


# -- driver -------------------------------------------------------------------

def test_driver_at_zero_is_lambda():
    spec = y_dependent()
    y = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(driver_F(spec, 0.3, y, 0.0), spec.lam_at(0.3, y))


def test_driver_lower_and_upper_sets():
    r = np.linspace(0, 5, 11)
    lo = lower_family(kappa=2.0, mu=1.0, Lambda=2.0)
    np.testing.assert_allclose(driver_F(lo, 0.0, [0.0], r), -r - r * r / 2.0)
    up = upper_family(Lambda=1.5, mu=3.0)
    np.testing.assert_allclose(driver_F(up, 0.0, [0.0], r), 1.5 - r * r / 1.5)


def test_driver_rejects_negative_r():
    with pytest.raises(DomainError):
        driver_F(lower_family(), 0.0, [0.0], -1e-3)


@given(st.floats(0.0, 50.0), st.floats(1e-3, 10.0), st.floats(0.1, 5.0), st.floats(0.0, 5.0))
def test_driver_strictly_decreasing(r, dr, eta, gamma):
    spec = homogeneous_spec(1.0, eta, 0.7, [(0.5, gamma), (0.3, INF)], Lambda=10.0, kappa=eta)
    a, b = driver_F(spec, 0.0, [0.0], [r, r + dr])
    assert b < a


# -- weight -------------------------------------------------------------------

def test_weight_values():
    assert weight_theta(0.0, 2.0) == 1.0
    assert weight_theta([1.0], 2.0) == pytest.approx(0.25)
    assert weight_theta(np.array([[0.6, 0.8]]), 3.0)[0] == pytest.approx(1 / 8)
    with pytest.raises(ConfigError):
        weight_theta([0.5], 1.0)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=3), st.floats(3.01, 8.0))
def test_weight_properties(y, q):
    y = np.asarray(y)
    th = weight_theta(y, q)
    assert 0 < th <= 1
    assert weight_theta(-y, q) == th
    assert th * inverse_weight(y, q) == pytest.approx(1.0, rel=1e-12)


def test_weight_gradient_matches_differences():
    y = np.linspace(-2, 2, 9)
    h = 1e-6
    fd = (weight_theta((y + h)[:, None], 2.0) - weight_theta((y - h)[:, None], 2.0)) / (2 * h)
    np.testing.assert_allclose(weight_gradient(y[:, None], 2.0)[:, 0], fd, atol=1e-8)


# -- transformed coefficients ------------------------------------------------

def test_transformed_coeffs_trivial_cases():
    spec = y_dependent()
    y = np.linspace(-2, 2, 5)[:, None]
    flat = homogeneous_spec(1.0, 1.0, 0.0, drift=0.0, sigma=0.0)
    bt, beta, c = transformed_coeffs(flat, 2.0, 0.0, y)
    np.testing.assert_array_equal(bt, 0.0)
    np.testing.assert_array_equal(beta, 0.0)
    np.testing.assert_array_equal(c, 0.0)
    # sigma = 0: only the drift survives
    nodiff = ProblemSpec(1.0, 1, (Affine(0.0, (-0.2,)),), ((Constant(0.0),),), Constant(1.0), Constant(0.0))
    bt, beta, c = transformed_coeffs(nodiff, 2.0, 0.0, y)
    np.testing.assert_allclose(bt[:, 0], -0.2 * y[:, 0])
    np.testing.assert_allclose(c, 2 * 2.0 * y[:, 0] * (-0.2 * y[:, 0]) / (1 + y[:, 0] ** 2))
    # origin: c = q tr(sigma sigma^T)
    bt, beta, c = transformed_coeffs(spec, 2.0, 0.0, np.zeros((1, 1)))
    assert c[0] == pytest.approx(2.0 * 0.09)
    np.testing.assert_allclose(beta, 0.0)


def test_transformed_operator_identity():
    """theta * L(v / theta) = 1/2 tr(a D^2 v) + <b_tilde, Dv> + c v for smooth v (finite differences)."""
    spec = ProblemSpec(1.0, 1, (Affine(0.1, (-0.3,)),), ((Sinusoid(0.5, 0.2),),), Constant(1.0),
                       Constant(0.0), Lambda=10.0)
    q = 2.0
    y = np.linspace(-1.5, 1.5, 13)
    h = 1e-4

    def v(z):
        return np.cos(z) + 0.3 * z

    def u(z):
        return v(z) / weight_theta(z[:, None], q)

    def d1(f):
        return (f(y + h) - f(y - h)) / (2 * h)

    def d2(f):
        return (f(y + h) - 2 * f(y) + f(y - h)) / h ** 2

    pts = y[:, None]
    a = spec.diffusion(0.0, pts)[:, 0, 0]
    b = spec.b(0.0, pts)[:, 0]
    lhs = weight_theta(pts, q) * (0.5 * a * d2(u) + b * d1(u))
    bt, _, c = transformed_coeffs(spec, q, 0.0, pts)
    rhs = 0.5 * a * d2(v) + bt[:, 0] * d1(v) + c * v(y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


# -- validation --------------------------------------------------------------

def test_constant_eta_satisfies_h3_for_any_p0():
    spec = upper_family(Lambda=1.0, mu=0.0)
    rep = validate_spec(spec, _sample(spec))
    assert rep.passed
    assert math.isinf(rep.h3.largest_p0)
    assert h3_report(0.0, 1.0, 1.0, 1e6).satisfied


def test_h3_ratio_three_quarters_gives_p0_two():
    rep = h3_report(0.0, 0.75, 1.0, None)
    assert rep.largest_p0 == pytest.approx(2.0)
    assert not rep.satisfied
    assert not h3_report(0.0, 0.75, 1.0, 4.0).satisfied
    assert h3_report(0.0, 0.875, 1.0, 4.0).satisfied


def test_eta_touching_zero_names_the_sample():
    spec = ProblemSpec(1.0, 1, (Constant(0.0),), ((Constant(0.0),),),
                       Clipped(Affine(0.0, (1.0,)), 0.0, 1.0), Constant(0.0), kappa=0.1)
    rep = validate_spec(spec, _sample(spec))
    failed = {c.name: c for c in rep.checks if not c.passed}
    assert "H1.eta_lower" in failed
    assert failed["H1.eta_lower"].observed == 0.0
    assert failed["H1.eta_lower"].witness["y"][0] <= 0.0


def test_non_finite_coefficient_is_hard_failure():
    spec = ProblemSpec(1.0, 1, (Constant(0.0),), ((Constant(0.0),),), Constant(1.0), Constant(float("nan")))
    with pytest.raises(AssumptionError, match="lambda"):
        validate_spec(spec, _sample(spec))


def test_bound_violation_reported():
    spec = homogeneous_spec(1.0, 1.0, 2.0, Lambda=1.5)
    rep = validate_spec(spec, _sample(spec))
    assert rep.failures() == ["H1.lambda_bound"]


def test_validate_is_pure():
    spec = y_dependent()
    g = _sample(spec)
    assert validate_spec(spec, g).to_dict() == validate_spec(spec, g).to_dict()
    assert validate_spec(spec, g).passed


def test_with_costs_keeps_intensities():
    base = y_dependent()
    other = base.with_costs(gammas=[Constant(1.0), INF])
    assert tuple(other.intensities) == tuple(base.intensities)
    assert isinstance(other.marks[0], JumpMark)
    with pytest.raises(ConfigError):
        base.with_costs(gammas=[INF])


@settings(max_examples=25)
@given(st.floats(0.1, 3.0), st.floats(0.0, 3.0), st.floats(0.0, 2.0))
def test_content_hash_distinguishes_costs(eta, lam, mu):
    a = homogeneous_spec(1.0, eta, lam, [(mu + 0.1, 0.0)], Lambda=5.0)
    b = homogeneous_spec(1.0, eta, lam + 0.5, [(mu + 0.1, 0.0)], Lambda=5.0)
    assert a.content_hash() == homogeneous_spec(1.0, eta, lam, [(mu + 0.1, 0.0)], Lambda=5.0).content_hash()
    assert a.content_hash() != b.content_hash()
