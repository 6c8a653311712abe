"""Likelihood-restricted prior sampling via random-walk Metropolis.

New live points are produced by a fixed-length random walk in the unit
cube: Gaussian steps shaped by the live-set sample covariance, reflected
at the cube boundary, accepted whenever the candidate likelihood exceeds
the current threshold.  The step scale adapts toward a 23.4% acceptance
rate with a vanishing Robbins-Monro gain, so the kernel freezes as calls
accumulate.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import LikelihoodError, Point
from .problems import Problem

TARGET_ACCEPT = 0.234
SCALE_MIN = 1e-8
SCALE_MAX = 10.0
COV_JITTER = 1e-10
HISTORY_LEN = 4096


@dataclass
class ProposalState:
    """Adaptive random-walk kernel state.

    ``scale`` multiplies steps drawn through ``cov_chol``, the lower
    Cholesky factor of the live-set covariance in unit-cube coordinates.
    ``accept_history`` keeps recent (scale, accepted fraction) pairs for
    diagnostics.  ``gamma0``/``kappa`` set the adaptation gain schedule
    gamma_n = gamma0 / n**kappa.
    """

    scale: float
    cov_chol: np.ndarray
    accept_history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LEN))
    target_accept: float = TARGET_ACCEPT
    gamma0: float = 1.0
    kappa: float = 0.5

    @classmethod
    def initial(cls, dim: int) -> "ProposalState":
        """Cold start: classic 2.38/sqrt(d) scaling over the covariance of
        the uniform unit cube (variance 1/12 per axis)."""
        chol = math.sqrt(1.0 / 12.0 + COV_JITTER) * np.eye(dim)
        return cls(scale=2.38 / math.sqrt(dim), cov_chol=chol)


@dataclass
class WalkResult:
    """Outcome of one constrained random walk: the final chain position
    plus its acceptance statistics."""

    point: Point
    n_accepted: int
    n_proposed: int
    chain_start_id: int

    @property
    def accepted_fraction(self) -> float:
        return self.n_accepted / self.n_proposed


def live_covariance(live: "list[Point]") -> np.ndarray:
    """Cholesky factor of the live-set sample covariance (unit-cube coords).

    Bessel-corrected, with 1e-10 added to the diagonal before factorizing;
    a degenerate live set therefore falls back to sqrt(jitter) * I.  If
    factorization still fails, the per-coordinate standard deviations are
    used as a diagonal factor.
    """
    if len(live) < 2:
        raise ValueError("covariance needs at least 2 live points")
    u = np.array([p.u for p in live], dtype=float)
    cov = np.atleast_2d(np.cov(u, rowvar=False, ddof=1))
    cov = cov + COV_JITTER * np.eye(u.shape[1])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return diagonal_covariance(live)


def diagonal_covariance(live: "list[Point]") -> np.ndarray:
    """Diagonal kernel factor from the per-coordinate live variances.

    The fallback proposal shape: with fewer live points than dimensions
    the sample covariance is singular by construction, and its Cholesky
    factor would freeze the unspanned directions (the jitter floor leaves
    them ~1e-5 wide), which stalls the walk.  A diagonal factor keeps
    every direction alive at the cost of ignoring correlations.
    """
    if len(live) < 2:
        raise ValueError("covariance needs at least 2 live points")
    u = np.array([p.u for p in live], dtype=float)
    var = u.var(axis=0, ddof=1) + COV_JITTER
    return np.diag(np.sqrt(var))


def kernel_factor(live: "list[Point]") -> np.ndarray:
    """Proposal shape for a live set: the full covariance factor when it is
    estimable (more points than dimensions), the diagonal fallback when the
    sample covariance is rank-deficient by construction."""
    u_dim = live[0].u.size if live else 0
    if len(live) - 1 < u_dim:
        return diagonal_covariance(live)
    return live_covariance(live)


def reflect_into_cube(x: np.ndarray) -> np.ndarray:
    """Fold coordinates back into [0, 1] by repeated boundary reflection.

    Implemented as the period-2 triangular wave 1 - |1 - (x mod 2)|, which
    applies the reflections exactly in one step for arbitrarily large
    excursions.
    """
    y = np.mod(x, 2.0)
    np.subtract(1.0, y, out=y)
    np.abs(y, out=y)
    np.subtract(1.0, y, out=y)
    return y


def choose_seed(live: "list[Point]", rng: np.random.Generator) -> Point:
    """Uniformly pick the chain start among the current live points (the
    point being replaced has already been removed)."""
    if not live:
        raise ValueError("cannot choose a chain start from an empty live set")
    return live[int(rng.integers(0, len(live)))]


def mcmc_walk(
    seed_point: Point,
    l_min: float,
    m_steps: int,
    prop: ProposalState,
    problem: Problem,
    rng: np.random.Generator,
    *,
    new_origin_id: int,
) -> WalkResult:
    """Run exactly ``m_steps`` likelihood-restricted Metropolis transitions.

    Candidates are ``u + scale * (cov_chol @ z)`` with standard-normal z,
    reflected into the cube, and accepted iff their log-likelihood strictly
    exceeds ``l_min``.  Under the flat constrained prior this uphill-only
    rule is exact Metropolis.  Rejected moves retain the current position,
    so with zero acceptances the returned point equals the seed (under a
    fresh origin id).

    Every proposal counts toward ``n_proposed`` and costs one likelihood
    evaluation; a NaN likelihood aborts the walk.
    """
    if m_steps < 1:
        raise ValueError("m_steps must be >= 1")
    u = seed_point.u
    theta = seed_point.theta
    logl = seed_point.logl
    steps = rng.standard_normal((m_steps, u.size)) @ prop.cov_chol.T
    steps *= prop.scale
    transform = problem.prior_transform
    loglike = problem.log_likelihood
    isnan = math.isnan
    n_accepted = 0
    for i in range(m_steps):
        u_cand = reflect_into_cube(u + steps[i])
        theta_cand = transform(u_cand)
        logl_cand = float(loglike(theta_cand))
        if isnan(logl_cand):
            raise LikelihoodError(f"likelihood returned NaN at theta={theta_cand!r}")
        if logl_cand > l_min:
            u, theta, logl = u_cand, theta_cand, logl_cand
            n_accepted += 1
    point = Point(u=u.copy(), theta=theta.copy(), logl=logl, origin_id=new_origin_id)
    return WalkResult(
        point=point,
        n_accepted=n_accepted,
        n_proposed=m_steps,
        chain_start_id=seed_point.origin_id,
    )


def adapt_scale(prop: ProposalState, latest: WalkResult, call_index: int) -> ProposalState:
    """Robbins-Monro step-scale update toward the target acceptance rate.

    ``scale *= exp(gamma_n * (accepted_fraction - target))`` with
    ``gamma_n = gamma0 / call_index**kappa``; the gain vanishes as calls
    accumulate, so adaptation dies out.  ``call_index`` counts fresh walks
    over the whole snowball process (memo hits do not adapt).  The scale
    is clamped to [1e-8, 10].
    """
    if call_index < 1:
        raise ValueError("call_index counts fresh walks and starts at 1")
    frac = latest.accepted_fraction
    prop.accept_history.append((prop.scale, frac))
    gain = prop.gamma0 / call_index**prop.kappa
    new_scale = prop.scale * math.exp(gain * (frac - prop.target_accept))
    prop.scale = min(max(new_scale, SCALE_MIN), SCALE_MAX)
    return prop
