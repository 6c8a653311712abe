"""Shared fixtures and the bookkeeping-invariant checker."""

from __future__ import annotations

import math

import numpy as np
import pytest

import snowball_ns as sns


@pytest.fixture
def gaussian2():
    return sns.get_problem("gaussian", 2, sigma=0.5)


@pytest.fixture
def constant3():
    return sns.get_problem("constant", 3, const_logl=-5.0)


def check_run_invariants(inner):
    """Assert the bookkeeping invariants every finished run must satisfy:
    volume conservation, nondecreasing dead likelihoods, ESS bounds,
    normalized weights, and the replacement-source arithmetic."""
    records = inner.records
    n_loop = inner.n_loop_dead

    prev = 1.0
    slabs = []
    for rec in records[:n_loop]:
        x = math.exp(rec.log_volume)
        slabs.append(prev - x)
        prev = x
    shares = [math.exp(rec.log_volume) for rec in records[n_loop:]]
    total = math.fsum(slabs) + math.fsum(shares)
    assert abs(total - 1.0) <= 1e-10, f"volume conservation broken: {total}"

    logls = [rec.point.logl for rec in records]
    assert all(a <= b for a, b in zip(logls, logls[1:])), "dead likelihoods decreased"

    est = inner.estimate
    assert 1.0 <= est.ess <= est.n_dead
    assert abs(float(np.sum(inner.weights)) - 1.0) <= 1e-12
    assert inner.n_memo_hits + inner.n_fresh_calls == inner.n_loop_dead
