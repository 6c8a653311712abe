"""Vanilla nested-sampling loop with deterministic volume bookkeeping.

One iteration discards the worst live point, records its prior-volume
slab and weight, and inserts a replacement drawn above the discarded
likelihood.  Volumes follow the deterministic compression rule
``ln X_t = t ln((K-1)/K)``, so identically configured runs are
bit-reproducible; all evidence sums are carried in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, TextIO

import numpy as np

from .problems import Problem
from .rng import STREAM_INITIAL, RngStreams

LOG_ZERO = float("-inf")

# Hard safety cap on dead points per run; keeps plateau likelihoods and
# other pathologies from iterating forever.
MAX_DEAD_POINTS = 10**6

# Origin ids below this belong to initial prior draws (id == draw index);
# ids at or above it belong to walk results, in fresh-call order.
WALK_ID_BASE = 1 << 32


class LikelihoodError(RuntimeError):
    """A likelihood evaluation returned NaN; the run cannot continue."""


@dataclass
class Point:
    """A parameter sample: unit-cube and physical coordinates plus its
    cached log-likelihood.  Treated as immutable once constructed."""

    u: np.ndarray
    theta: np.ndarray
    logl: float
    origin_id: int


@dataclass
class DeadRecord:
    """A discarded point with its volume slab and evidence weight.

    ``log_volume`` is ln X_t, the prior volume remaining after the point
    died (for final live-set top-up records it is the per-point share
    ln X_T - ln K instead).  ``log_weight`` is ln w_t = ln L_t +
    ln(X_{t-1} - X_t), computed in log space.
    """

    point: Point
    iteration: int
    log_volume: float
    log_weight: float
    k_at_death: int


@dataclass
class EvidenceEstimate:
    """Final evidence summary of one run.

    ``log_z_err`` is the conventional sqrt(H/K) estimate; ``ess`` the
    effective sample size of the normalized posterior weights; ``n_dead``
    counts all weighted records including the final live-set top-up.
    """

    log_z: float
    log_z_err: float
    info_h: float
    ess: float
    n_dead: int
    k_final: int


@dataclass
class RunState:
    """One nested-sampling run: live set, dead records and accumulators.

    The live-point count is fixed for the lifetime of the run (one point
    dies, one replaces it each iteration).  Confine a state to one
    execution context at a time.
    """

    problem: Problem
    live: list[Point]
    dead: list[DeadRecord] = field(default_factory=list)
    log_x: float = 0.0  # ln X_t after the last completed iteration
    log_z: float = LOG_ZERO
    info_h: float = 0.0
    n_like_evals: int = 0
    n_lrps_calls: int = 0
    rng_state: dict = field(default_factory=dict)
    finalized: bool = False

    def __post_init__(self):
        self.k = len(self.live)
        if self.k < 2:
            raise ValueError("nested sampling needs at least 2 live points")
        self._logl = np.array([p.logl for p in self.live], dtype=float)
        self._oid = np.array([p.origin_id for p in self.live], dtype=np.int64)
        self.live_ids = {p.origin_id for p in self.live}

    def worst_index(self) -> int:
        """Index of the lowest-likelihood live point; ties go to the lowest
        origin id, which makes plateau behavior deterministic."""
        m = self._logl.min()
        candidates = np.flatnonzero(self._logl == m)
        return int(candidates[np.argmin(self._oid[candidates])])

    def pop_worst(self) -> Point:
        i = self.worst_index()
        point = self.live.pop(i)
        self._logl = np.delete(self._logl, i)
        self._oid = np.delete(self._oid, i)
        self.live_ids.discard(point.origin_id)
        return point

    def add_live(self, point: Point) -> None:
        self.live.append(point)
        self._logl = np.append(self._logl, point.logl)
        self._oid = np.append(self._oid, point.origin_id)
        self.live_ids.add(point.origin_id)

    @property
    def log_z_live(self) -> float:
        """Log of the maximal evidence contribution still in the live set:
        logsumexp of live likelihoods over the current volume, split K ways."""
        return logsumexp(self._logl) + self.log_x - math.log(self.k)


def logsumexp(values: Iterable[float]) -> float:
    """Stable ln(sum(exp(values))); -inf for an all-(-inf) input."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("logsumexp of an empty sequence")
    m = float(arr.max())
    if m == LOG_ZERO:
        return LOG_ZERO
    return m + math.log(float(np.sum(np.exp(arr - m))))


def log_prior_volume(t: int, k: int) -> float:
    """Deterministic log prior volume after t iterations at constant K:
    t * ln((K-1)/K).  Runs with varying K sum ln((K_j-1)/K_j) instead."""
    if k < 2:
        raise ValueError("the deterministic volume rule needs K >= 2")
    if t < 0:
        raise ValueError("iteration count must be nonnegative")
    return t * math.log((k - 1) / k)


def draw_initial_point(problem: Problem, streams: RngStreams, index: int) -> Point:
    """Initial prior draw number ``index``: a pure function of the master
    seed and the index, so growing the live set keeps earlier draws."""
    gen = streams.borrow(STREAM_INITIAL, index)
    u = gen.random(problem.dim)
    theta = problem.prior_transform(u)
    logl = float(problem.log_likelihood(theta))
    if math.isnan(logl):
        raise LikelihoodError(
            f"likelihood returned NaN for initial point {index} at theta={theta!r}"
        )
    return Point(u=u, theta=theta, logl=logl, origin_id=index)


def init_live_set(problem: Problem, k: int, streams: RngStreams) -> list[Point]:
    """Draw K independent prior points with prefix-stable ordering."""
    if k < 2:
        raise ValueError("need at least 2 live points")
    return [draw_initial_point(problem, streams, i) for i in range(k)]


def _log_add(a: float, b: float) -> float:
    if a == LOG_ZERO:
        return b
    if b == LOG_ZERO:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _accumulate(state: RunState, log_w: float, logl: float) -> None:
    # Streaming evidence and information update (recomputed exactly at
    # finalize); zero-weight records leave both untouched.
    log_z_new = _log_add(state.log_z, log_w)
    if log_w != LOG_ZERO:
        if state.log_z == LOG_ZERO:
            state.info_h = math.exp(log_w - log_z_new) * logl - log_z_new
        else:
            state.info_h = (
                math.exp(log_w - log_z_new) * logl
                + math.exp(state.log_z - log_z_new) * (state.info_h + state.log_z)
                - log_z_new
            )
    state.log_z = log_z_new


def ns_step(state: RunState, replace_fn: Callable[[float, list[Point]], Point]) -> RunState:
    """One nested-sampling iteration.

    The worst live point (lowest likelihood, ties broken by lower origin
    id) becomes a dead record carrying the volume slab
    ln(X_{t-1} - X_t) = ln X_{t-1} - ln K, which is exact for the
    deterministic compression rule.  ``replace_fn(l_min, live)`` supplies
    the replacement; in the full algorithm it consults the memo table
    first and falls back to a fresh likelihood-restricted walk.
    """
    if state.finalized:
        raise RuntimeError("run already finalized")
    k = state.k
    worst = state.pop_worst()
    l_min = worst.logl
    log_dx = state.log_x - math.log(k)
    log_x_new = state.log_x + math.log((k - 1) / k)
    log_w = worst.logl + log_dx
    state.dead.append(
        DeadRecord(
            point=worst,
            iteration=len(state.dead) + 1,
            log_volume=log_x_new,
            log_weight=log_w,
            k_at_death=k,
        )
    )
    _accumulate(state, log_w, worst.logl)
    state.log_x = log_x_new

    replacement = replace_fn(l_min, state.live)
    if math.isnan(replacement.logl) or replacement.logl < l_min:
        raise LikelihoodError(
            f"replacement likelihood {replacement.logl!r} below threshold {l_min!r}"
        )
    state.add_live(replacement)
    return state


def termination_check(state: RunState, epsilon: float) -> bool:
    """True when the live set's maximal remaining contribution is below
    ``epsilon`` relative to the accumulated evidence."""
    if not state.dead:
        raise ValueError("termination check needs at least one dead point")
    log_z_live = state.log_z_live
    if log_z_live == LOG_ZERO:
        return True
    if state.log_z == LOG_ZERO:
        return False
    return (log_z_live - state.log_z) < math.log(epsilon)


def finalize_run(state: RunState) -> tuple[EvidenceEstimate, list[DeadRecord], np.ndarray]:
    """Top up the remaining live points and compute the final estimate.

    Each survivor is appended as a dead record with the equal volume share
    ln X_T - ln K, in (likelihood, origin id) order.  Evidence, information
    and effective sample size are then recomputed exactly over all records.

    Returns
    -------
    (estimate, records, weights)
        The evidence estimate, the full dead sequence, and the normalized
        posterior weight of each record.
    """
    if state.finalized:
        raise RuntimeError("run already finalized")
    state.finalized = True
    k = state.k
    share = state.log_x - math.log(k)
    n_loop = len(state.dead)
    survivors = sorted(state.live, key=lambda p: (p.logl, p.origin_id))
    for i, p in enumerate(survivors):
        log_w = p.logl + share
        state.dead.append(
            DeadRecord(
                point=p,
                iteration=n_loop + 1 + i,
                log_volume=share,
                log_weight=log_w,
                k_at_death=k,
            )
        )
        _accumulate(state, log_w, p.logl)

    log_ws = np.array([r.log_weight for r in state.dead], dtype=float)
    logls = np.array([r.point.logl for r in state.dead], dtype=float)
    n = len(state.dead)
    log_z = logsumexp(log_ws)
    if log_z == LOG_ZERO:
        # Degenerate all-zero-likelihood run: flat weights, no information.
        weights = np.full(n, 1.0 / n)
        info_h = 0.0
    else:
        weights = np.exp(log_ws - log_z)
        weights /= weights.sum()
        mask = weights > 0.0
        info_h = float(np.sum(weights[mask] * (logls[mask] - log_z)))
    state.log_z = log_z
    state.info_h = info_h
    estimate = EvidenceEstimate(
        log_z=log_z,
        log_z_err=math.sqrt(max(info_h, 0.0) / k),
        info_h=info_h,
        ess=ess(weights),
        n_dead=n,
        k_final=k,
    )
    return estimate, state.dead, weights


def ess(weights: Sequence[float]) -> float:
    """Effective sample size 1 / sum(w_i^2) of normalized weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValueError("ess of an empty weight vector")
    return 1.0 / float(w @ w)


def _g17(x: float) -> str:
    # 17 significant digits round-trip any double exactly.
    return format(float(x), ".17g")


def write_dead_csv(
    records: Sequence[DeadRecord],
    fh: TextIO,
    weights: Optional[Sequence[float]] = None,
) -> None:
    """Write dead records as CSV, full double precision.

    Header: ``iter,k_at_death,ln_x,ln_l,ln_w,theta_0..theta_{d-1}`` with a
    trailing ``weight`` column when normalized weights are supplied.
    """
    if not records:
        raise ValueError("no records to export")
    d = records[0].point.theta.size
    columns = ["iter", "k_at_death", "ln_x", "ln_l", "ln_w"]
    columns += [f"theta_{i}" for i in range(d)]
    if weights is not None:
        columns.append("weight")
    fh.write(",".join(columns) + "\n")
    for i, rec in enumerate(records):
        row = [
            str(rec.iteration),
            str(rec.k_at_death),
            _g17(rec.log_volume),
            _g17(rec.point.logl),
            _g17(rec.log_weight),
        ]
        row += [_g17(v) for v in rec.point.theta]
        if weights is not None:
            row.append(_g17(weights[i]))
        fh.write(",".join(row) + "\n")
