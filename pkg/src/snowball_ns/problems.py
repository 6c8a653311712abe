"""Inference problems: (prior transform, log-likelihood) pairs on a box.

A problem maps the unit cube to a box in parameter space and evaluates a
log-likelihood there.  The built-in registry ships the scaled Rosenbrock
benchmark plus two analytic problems (isotropic Gaussian, constant) whose
exact evidence makes them accuracy oracles for the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Problem",
    "rosenbrock_loglike",
    "box_prior_transform",
    "box_prior_inverse",
    "gaussian_loglike",
    "constant_loglike",
    "gaussian_box_log_evidence",
    "get_problem",
    "available_problems",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Problem:
    """An inference problem with a box prior.

    ``prior_transform`` maps the unit cube [0,1]^dim onto the box support;
    ``log_likelihood`` evaluates the (natural-log) likelihood at a physical
    point.  Both are deterministic.  ``analytic_log_evidence`` is set only
    for problems whose prior-weighted likelihood integral is known exactly.
    ``params`` records the constructor arguments so manifests and
    checkpoints can rebuild the problem from its name.
    """

    name: str
    dim: int
    prior_transform: Callable[[np.ndarray], np.ndarray]
    log_likelihood: Callable[[np.ndarray], float]
    analytic_log_evidence: Optional[float] = None
    params: dict = field(default_factory=dict)


def rosenbrock_loglike(theta: np.ndarray) -> float:
    """Scaled Rosenbrock log-likelihood.

    Returns ``-2 * sum_{i=1}^{d-1} [100 (theta_{i+1} - theta_i^2)^2
    + (1 - theta_i)^2]``; always <= 0, with the maximum 0 attained exactly
    at the all-ones vector.  The sum runs over d-1 consecutive pairs.

    Parameters
    ----------
    theta : array_like, shape (d,)
        Parameter vector with d >= 2 finite components.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size < 2:
        raise ValueError("rosenbrock_loglike needs a 1-d vector with >= 2 components")
    if not np.isfinite(theta).all():
        raise ValueError(f"non-finite component in parameter vector {theta!r}")
    a = theta[1:] - theta[:-1] ** 2
    b = 1.0 - theta[:-1]
    return -2.0 * float(np.sum(100.0 * a * a + b * b))


def box_prior_transform(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map a unit-cube point to the box [lo, hi]^d, component-wise linear."""
    u = np.asarray(u, dtype=float)
    if not lo < hi:
        raise ValueError(f"empty box: lo={lo} hi={hi}")
    if u.min() < 0.0 or u.max() > 1.0:
        raise ValueError(f"point outside the unit cube: {u!r}")
    return lo + (hi - lo) * u


def box_prior_inverse(theta: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Inverse of :func:`box_prior_transform` on its box support."""
    theta = np.asarray(theta, dtype=float)
    if not lo < hi:
        raise ValueError(f"empty box: lo={lo} hi={hi}")
    return (theta - lo) / (hi - lo)


def gaussian_loglike(theta: np.ndarray, sigma: float) -> float:
    """Normalized isotropic Gaussian log-density, -d/2 ln(2 pi s^2) - |theta|^2/(2 s^2)."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    return -0.5 * d * math.log(2.0 * math.pi * sigma * sigma) - float(theta @ theta) / (
        2.0 * sigma * sigma
    )


def constant_loglike(theta: np.ndarray, c: float) -> float:
    """Constant log-likelihood; the evidence of the problem is exp(c)."""
    return float(c)


def gaussian_box_log_evidence(dim: int, sigma: float, lo: float, hi: float) -> float:
    """Exact log-evidence of the isotropic Gaussian under a flat box prior.

    Per axis the integral is the Gaussian mass inside [lo, hi] divided by
    the box width; the truncation correction enters through erf.  For
    sigma much smaller than the box it is below 1e-15 and vanishes in
    double precision.
    """
    mass = 0.5 * (math.erf(hi / (sigma * _SQRT2)) - math.erf(lo / (sigma * _SQRT2)))
    return dim * (math.log(mass) - math.log(hi - lo))


def _make_rosenbrock(dim: int, lo: float = -10.0, hi: float = 10.0) -> Problem:
    if dim < 2:
        raise ValueError("rosenbrock needs dim >= 2")
    return Problem(
        name="rosenbrock",
        dim=dim,
        prior_transform=lambda u: box_prior_transform(u, lo, hi),
        log_likelihood=rosenbrock_loglike,
        params={"lo": float(lo), "hi": float(hi)},
    )


def _make_gaussian(dim: int, sigma: float = 0.1, lo: float = -10.0, hi: float = 10.0) -> Problem:
    if dim < 1:
        raise ValueError("gaussian needs dim >= 1")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return Problem(
        name="gaussian",
        dim=dim,
        prior_transform=lambda u: box_prior_transform(u, lo, hi),
        log_likelihood=lambda theta: gaussian_loglike(theta, sigma),
        analytic_log_evidence=gaussian_box_log_evidence(dim, sigma, lo, hi),
        params={"sigma": float(sigma), "lo": float(lo), "hi": float(hi)},
    )


def _make_constant(dim: int, const_logl: float = 0.0, lo: float = -10.0, hi: float = 10.0) -> Problem:
    if dim < 1:
        raise ValueError("constant needs dim >= 1")
    return Problem(
        name="constant",
        dim=dim,
        prior_transform=lambda u: box_prior_transform(u, lo, hi),
        log_likelihood=lambda theta: constant_loglike(theta, const_logl),
        analytic_log_evidence=float(const_logl),
        params={"const_logl": float(const_logl), "lo": float(lo), "hi": float(hi)},
    )


_REGISTRY: dict[str, Callable[..., Problem]] = {
    "rosenbrock": _make_rosenbrock,
    "gaussian": _make_gaussian,
    "constant": _make_constant,
}


def available_problems() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def get_problem(name: str, dim: int, **params) -> Problem:
    """Instantiate a registered problem by name.

    Unknown names raise ``ValueError`` listing the registry; parameter
    names are validated by the underlying factory.
    """
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; available: {', '.join(available_problems())}"
        ) from None
    return factory(dim, **params)
