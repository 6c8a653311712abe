"""Unit tests for the problem definitions and their analytic evidences."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from snowball_ns.problems import (
    available_problems,
    box_prior_inverse,
    box_prior_transform,
    constant_loglike,
    gaussian_box_log_evidence,
    gaussian_loglike,
    get_problem,
    rosenbrock_loglike,
)


def test_rosenbrock_all_ones_is_maximum():
    assert rosenbrock_loglike(np.ones(20)) == 0.0
    assert rosenbrock_loglike(np.ones(2)) == 0.0


def test_rosenbrock_at_origin():
    # 19 pair terms, each contributing -2 * (1 - 0)^2
    assert rosenbrock_loglike(np.zeros(20)) == -38.0


def test_rosenbrock_d2_value():
    # -2 * (100 * (1 - 0)^2 + (1 - 0)^2)
    assert rosenbrock_loglike(np.array([0.0, 1.0])) == -202.0


def test_rosenbrock_strictly_negative_off_maximum():
    rng = np.random.default_rng(7)
    theta = -10.0 + 20.0 * rng.random((10_000, 20))
    values = [rosenbrock_loglike(t) for t in theta]
    assert max(values) < 0.0


def test_rosenbrock_rejects_bad_input():
    with pytest.raises(ValueError):
        rosenbrock_loglike(np.array([1.0]))
    with pytest.raises(ValueError):
        rosenbrock_loglike(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        rosenbrock_loglike(np.array([np.inf, 1.0]))


def test_box_transform_examples():
    np.testing.assert_array_equal(
        box_prior_transform(np.full(4, 0.5), -10.0, 10.0), np.zeros(4)
    )
    np.testing.assert_array_equal(
        box_prior_transform(np.zeros(3), -10.0, 10.0), np.full(3, -10.0)
    )
    np.testing.assert_array_equal(
        box_prior_transform(np.array([0.75]), -10.0, 10.0), np.array([5.0])
    )


def test_box_transform_rejects_outside_cube():
    with pytest.raises(ValueError):
        box_prior_transform(np.array([0.5, 1.0000001]), -10.0, 10.0)
    with pytest.raises(ValueError):
        box_prior_transform(np.array([-0.01]), -10.0, 10.0)
    with pytest.raises(ValueError):
        box_prior_transform(np.array([0.5]), 3.0, 3.0)


def test_box_transform_roundtrip():
    rng = np.random.default_rng(11)
    for _ in range(200):
        u = rng.random(6)
        back = box_prior_inverse(box_prior_transform(u, -10.0, 10.0), -10.0, 10.0)
        np.testing.assert_allclose(back, u, rtol=1e-14, atol=1e-15)


def test_gaussian_peak_value():
    assert gaussian_loglike(np.zeros(1), 1.0) == pytest.approx(
        -0.5 * math.log(2.0 * math.pi), abs=1e-15
    )


def test_gaussian_d2_value():
    assert gaussian_loglike(np.array([1.0, 1.0]), 1.0) == pytest.approx(
        -math.log(2.0 * math.pi) - 1.0, abs=1e-14
    )


def test_gaussian_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        gaussian_loglike(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        get_problem("gaussian", 2, sigma=-1.0)


def test_gaussian_analytic_evidence_matches_quadrature():
    # Independent oracle: 1-D quadrature of the normalized Gaussian over the
    # box, raised to the dimension (the integrand factorizes).
    sigma, lo, hi, dim = 0.1, -10.0, 10.0, 3

    def density(x):
        return math.exp(-0.5 * (x / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))

    mass, err = integrate.quad(density, lo, hi, epsabs=1e-14, epsrel=1e-13)
    assert err < 1e-12
    oracle = dim * (math.log(mass) - math.log(hi - lo))
    analytic = gaussian_box_log_evidence(dim, sigma, lo, hi)
    assert analytic == pytest.approx(oracle, abs=1e-12)
    # with sigma << box width the truncation correction is below 1e-15
    assert abs(analytic - dim * -math.log(hi - lo)) < 1e-15
    problem = get_problem("gaussian", dim, sigma=sigma)
    assert problem.analytic_log_evidence == analytic


def test_gaussian_truncation_correction_enters_for_wide_sigma():
    # For sigma comparable to the box the erf term must show up.
    val = gaussian_box_log_evidence(1, 5.0, -10.0, 10.0)
    mass = math.erf(10.0 / (5.0 * math.sqrt(2.0)))
    assert val == pytest.approx(math.log(mass) - math.log(20.0), abs=1e-14)


def test_constant_problem():
    assert constant_loglike(np.zeros(3), 0.0) == 0.0
    assert constant_loglike(np.array([4.2]), -5.0) == -5.0
    problem = get_problem("constant", 2, const_logl=-5.0)
    assert problem.analytic_log_evidence == -5.0
    assert problem.log_likelihood(np.array([3.0, -2.0])) == -5.0


def test_registry():
    assert available_problems() == ("constant", "gaussian", "rosenbrock")
    with pytest.raises(ValueError, match="unknown problem"):
        get_problem("banana", 2)
    with pytest.raises(ValueError):
        get_problem("rosenbrock", 1)
    problem = get_problem("rosenbrock", 4, lo=-5.0, hi=5.0)
    assert problem.dim == 4
    assert problem.params == {"lo": -5.0, "hi": 5.0}
    assert problem.log_likelihood(problem.prior_transform(np.full(4, 0.5))) == -6.0


def test_problem_evaluations_are_deterministic():
    problem = get_problem("rosenbrock", 3)
    u = np.array([0.3, 0.6, 0.9])
    theta1 = problem.prior_transform(u)
    theta2 = problem.prior_transform(u)
    np.testing.assert_array_equal(theta1, theta2)
    assert problem.log_likelihood(theta1) == problem.log_likelihood(theta2)
