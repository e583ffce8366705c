import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from cooldown_sde.schedules import (
    EnvelopeParams, Schedule, canonical_envelope, comparison_holds, default_grid, find_alpha_eta, parse_schedule,
    phi_R, predicted_exponent, validate_envelope,
)


def test_eval_examples():
    assert Schedule("poly", 1.0, 1.0)(0.0) == 1.0
    assert Schedule("poly", 1.0, 2.0)(9.0) == pytest.approx(0.01, rel=1e-15)
    assert Schedule("log", 2.0)(math.e - 1.0) == pytest.approx(2.0, rel=1e-15)
    assert Schedule("const", 0.3)(5.0) == 0.3
    assert Schedule("zero")(5.0) == 0.0


def test_eval_rejects_bad_times():
    with pytest.raises(ValueError):
        Schedule("poly", 1.0, 1.0)(-1.0)
    with pytest.raises(ValueError):
        Schedule("log", 1.0)(0.5)


def test_tail_integral_examples():
    assert Schedule("poly", 1.0, 1.0).squared_tail_integral(0.0) == pytest.approx(1.0)
    assert Schedule("poly", 2.0, 1.0).squared_tail_integral(1.0) == pytest.approx(2.0)
    assert Schedule("log", 1.0).squared_tail_integral(1.0) == math.inf
    assert Schedule("const", 1.0).squared_tail_integral(0.0) == math.inf
    assert Schedule("poly", 1.0, 0.5).squared_tail_integral(0.0) == math.inf
    assert Schedule("zero").squared_tail_integral(3.0) == 0.0


@pytest.mark.parametrize("scale,sigma,t", [(1.0, 0.6, 0.0), (0.5, 1.2, 3.0), (2.0, 2.5, 10.0), (1.0, 1.0, 100.0)])
def test_tail_integral_matches_quadrature(scale, sigma, t):
    s = Schedule("poly", scale, sigma)
    num, _ = integrate.quad(lambda u: s(u) ** 2, t, np.inf, epsabs=0, epsrel=1e-12, limit=500)
    assert s.squared_tail_integral(t) == pytest.approx(num, rel=1e-8)


@pytest.mark.parametrize("text", ["poly:1:1.2", "poly:0.5:0.5", "const:2", "zero"])
def test_squared_integral_matches_quadrature(text):
    s = parse_schedule(text)
    num, _ = integrate.quad(lambda u: s(u) ** 2, 1.0, 7.0, epsrel=1e-12)
    assert s.squared_integral(1.0, 7.0) == pytest.approx(num, rel=1e-10, abs=1e-14)


def test_parse_schedule_round_trip_and_errors():
    for text in ("poly:1.0:1.2", "log:2.0", "const:0.5", "zero"):
        assert parse_schedule(text).ident() == text
    for bad in ("poly:1", "cubic:1", "log:x", "zero:1", ""):
        with pytest.raises(ValueError, match="schedule"):
            parse_schedule(bad)


@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_poly_schedule_is_nonincreasing(a, b):
    s = Schedule("poly", 1.3, 0.7)
    lo, hi = min(a, b), max(a, b)
    assert s(hi) <= s(lo)


def test_phi_R_examples():
    p = EnvelopeParams(theta=0.75, v_scale=1.0, v_exponent=2.0, eta=1.0, R=1.0)
    assert phi_R(p, 0.0) == 1.0
    assert phi_R(p, 2.0) == pytest.approx(0.25, rel=1e-15)
    for t in (1.0, 10.0, 100.0):
        h = 1e-4 * (t + 1)
        deriv = (phi_R(p, t + h) - phi_R(p, t - h)) / (2 * h)
        rhs = -p.eta * phi_R(p, t) ** (2 * p.theta)
        assert abs(deriv - rhs) / abs(rhs) < 1e-6


@given(st.floats(0.55, 0.95), st.floats(0.01, 10.0), st.floats(0.01, 10.0), st.floats(0.0, 1e3))
def test_phi_R_positive_and_decreasing(theta, eta, R, t):
    p = EnvelopeParams(theta=theta, v_scale=1.0, v_exponent=1.0, eta=eta, R=R)
    a, b = phi_R(p, t), phi_R(p, t + 1.0)
    assert 0.0 < b < a


def test_predicted_exponent_examples():
    assert predicted_exponent(0.75, 2.0) == pytest.approx(2.0)
    assert predicted_exponent(0.75, 0.9) == pytest.approx(1.2)
    assert predicted_exponent(0.6, 3.0) == pytest.approx(5.0)
    for bad in (0.5, 1.0, 0.3):
        with pytest.raises(ValueError):
            predicted_exponent(bad, 1.0)


@given(st.floats(0.51, 0.99), st.floats(0.0, 20.0), st.floats(0.0, 20.0))
def test_predicted_exponent_monotone_and_capped(theta, s1, s2):
    lo, hi = sorted((s1, s2))
    assert predicted_exponent(theta, lo) <= predicted_exponent(theta, hi)
    assert predicted_exponent(theta, hi) <= 1.0 / (2 * theta - 1) + 1e-12


def test_validate_envelope_examples():
    grid = default_grid(1e4)
    p = EnvelopeParams(theta=0.75, v_scale=1.0, v_exponent=2.0, kappa1=2.0, kappa2=1.0)
    assert validate_envelope(p, Schedule("poly", 1.0, 2.0), grid).ok
    p = EnvelopeParams(theta=0.75, v_scale=1.0, v_exponent=1.6, kappa1=1.6, kappa2=1.0)
    assert validate_envelope(p, Schedule("poly", 1.0, 1.2), grid).ok
    assert validate_envelope(p, Schedule("zero"), grid).noise_violation <= 0


def test_validate_envelope_reports_violations():
    # v decays too fast for the noise
    p = EnvelopeParams(theta=0.75, v_scale=1.0, v_exponent=2.0, kappa1=2.0, kappa2=1.0)
    rep = validate_envelope(p, Schedule("poly", 1.0, 1.2))
    assert not rep.ok and rep.noise_violation > 0
    # kappa1 too small for -v'/v
    p = EnvelopeParams(theta=0.75, v_scale=1.0, v_exponent=2.0, kappa1=1.0, kappa2=1.0)
    rep = validate_envelope(p, Schedule("poly", 1.0, 2.0))
    assert not rep.ok and rep.decay_violation > 0
    with pytest.raises(ValueError):
        validate_envelope(p, Schedule("zero"), grid=[1.0, 0.5])


@pytest.mark.parametrize("theta,sigma,scale", [
    (0.75, 1.2, 1.0), (0.75, 2.5, 1.0), (0.75, 1.5, 0.5), (0.6, 3.0, 2.0), (0.6, 1.0, 1.0), (0.9, 0.7, 1.0),
])
def test_canonical_envelopes_validate(theta, sigma, scale):
    sched = Schedule("poly", scale, sigma)
    p = canonical_envelope(theta, sched)
    if sigma >= theta / (2 * theta - 1):
        assert p.v_exponent == pytest.approx(1 / (2 * theta - 1))
    else:
        assert p.v_exponent == pytest.approx(sigma / theta)
    assert p.v_exponent == pytest.approx(predicted_exponent(theta, sigma))
    assert validate_envelope(p, sched).ok


@pytest.mark.parametrize("theta,c_w", [(0.75, 0.0), (0.75, 1.0), (0.6, 0.5), (0.9, 2.0)])
def test_alpha_eta_search_satisfies_comparison(theta, c_w):
    alpha, eta = find_alpha_eta(theta, rho=0.5, L=4.0, c_w=c_w, kappa1=1.6, kappa2=1.0)
    assert alpha >= c_w and eta > 0
    assert comparison_holds(theta, 0.5, 4.0, c_w, 1.6, 1.0, alpha, eta)
    # too large an eta breaks it
    assert not comparison_holds(theta, 0.5, 4.0, c_w, 1.6, 1.0, alpha, 10 * eta / 0.5)
