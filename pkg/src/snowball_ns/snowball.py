"""The outer snowballing loop.

Each outer iteration enlarges the live-point count by a fixed increment
and replays a full nested-sampling run.  Work is reused two ways: the
initial live set is prefix-stable (earlier draws are kept, only the new
ones are evaluated), and every fresh likelihood-restricted walk is
memoized under the exact bit pattern of its threshold, so replayed
thresholds skip the walk entirely.
"""

from __future__ import annotations

import logging
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import core, lrps
from .core import LikelihoodError, Point, RunState
from .lrps import ProposalState, WalkResult
from .problems import Problem
from .rng import STREAM_SEED_CHOICE, STREAM_WALK, RngStreams

log = logging.getLogger("snowball_ns")


def float_to_bits(x: float) -> int:
    """The 64-bit pattern of a double, as a signed integer."""
    return struct.unpack("<q", struct.pack("<d", x))[0]


def bits_to_float(bits: int) -> float:
    return struct.unpack("<d", struct.pack("<q", bits))[0]


class RunAbort(RuntimeError):
    """An inner run aborted; resume from the last on-disk checkpoint."""


@dataclass
class SnowballConfig:
    """Configuration of one snowball process.

    Outer iteration j runs nested sampling with ``k0 + (j-1) * k_inc``
    live points, an M-step walk sampler, and the given termination ratio.
    ``memo_enabled=False`` degrades to independent plain runs (useful for
    comparison and testing).
    """

    problem: Problem
    k0: int
    k_inc: int
    m_steps: int
    max_outer_iterations: int
    seed: int
    term_epsilon: float = 1e-6
    memo_enabled: bool = True

    def __post_init__(self):
        if self.k0 < 2:
            raise ValueError("k0 must be >= 2 (the volume rule needs K >= 2)")
        if self.k_inc < 1:
            raise ValueError("k_inc must be >= 1")
        if self.m_steps < 1:
            raise ValueError("m_steps must be >= 1")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")
        if not 0.0 < self.term_epsilon < 1.0:
            raise ValueError("term_epsilon must lie in (0, 1)")
        self.seed = int(self.seed)

    def k_at(self, outer_iteration: int) -> int:
        return self.k0 + (outer_iteration - 1) * self.k_inc


@dataclass
class MemoTable:
    """Threshold-keyed store of walk results, shared across outer iterations.

    Keys are the exact 64-bit patterns of the threshold likelihoods; there
    is no epsilon matching, since an approximate match would corrupt the
    threshold ordering.  Entries are write-once: a second put under an
    existing key is a no-op.  ``n_hits``/``n_misses`` count lookups.
    """

    entries: dict[int, WalkResult] = field(default_factory=dict)
    n_hits: int = 0
    n_misses: int = 0

    def lookup(self, l_min: float) -> Optional[WalkResult]:
        """Exact-bit-pattern lookup of a stored walk result."""
        if not math.isfinite(l_min):
            raise ValueError(f"memo thresholds must be finite, got {l_min}")
        result = self.entries.get(float_to_bits(l_min))
        if result is None:
            self.n_misses += 1
        else:
            self.n_hits += 1
        return result

    def put(self, l_min: float, result: WalkResult) -> None:
        """Store a walk result under its threshold; first write wins.

        The stored point must lie at or above the threshold.  Equality is
        only reachable on likelihood plateaus (where the walk can return
        its seed); anything below the threshold indicates a sampler bug.
        """
        if math.isnan(result.point.logl) or result.point.logl < l_min:
            raise LikelihoodError(
                f"memo entry below threshold: logl={result.point.logl!r} l_min={l_min!r}"
            )
        self.entries.setdefault(float_to_bits(l_min), result)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class SnowballReport:
    """Per-outer-iteration summary.

    ``n_dead`` counts the dead points whose replacement was consumed during
    the loop, so ``n_memo_hits + n_lrps_calls_new == n_dead``; the final
    live-set top-up records appear only in the evidence estimate.
    ``wall_seconds`` is measured and therefore excluded from the
    deterministic JSON report stream.
    """

    outer_iteration: int
    k: int
    log_z: float
    log_z_err: float
    ess: float
    n_dead: int
    n_like_evals_cumulative: int
    n_lrps_calls_new: int
    n_memo_hits: int
    wall_seconds: float

    def to_json_dict(self) -> dict:
        """Deterministic JSON form (drops the measured wall time)."""
        return {
            "outer_iteration": self.outer_iteration,
            "k": self.k,
            "log_z": self.log_z,
            "log_z_err": self.log_z_err,
            "ess": self.ess,
            "n_dead": self.n_dead,
            "n_like_evals_cumulative": self.n_like_evals_cumulative,
            "n_lrps_calls_new": self.n_lrps_calls_new,
            "n_memo_hits": self.n_memo_hits,
        }


@dataclass
class InnerRunResult:
    """Full outcome of one inner nested-sampling run."""

    estimate: core.EvidenceEstimate
    records: list[core.DeadRecord]
    weights: np.ndarray
    n_loop_dead: int
    n_memo_hits: int
    n_fresh_calls: int
    accept_fractions: list[float]
    termination: str


@dataclass
class SamplerState:
    """Adaptive kernel state carried across outer iterations (and through
    checkpoints): everything except the covariance factor, which is
    recomputed from the live set at every run start."""

    scale: float
    call_index: int
    target_accept: float = lrps.TARGET_ACCEPT
    gamma0: float = 1.0
    kappa: float = 0.5
    accept_history: list = field(default_factory=list)


def extend_initial(problem: Problem, k_prev: int, k_new: int, seed: int) -> list[Point]:
    """Deterministically extend the initial live set from k_prev to k_new.

    Draw i is a pure function of (seed, i), so the first k_prev points are
    bit-identical to any earlier call with the same seed and the split of
    the range across calls is irrelevant.
    """
    if not 0 <= k_prev < k_new:
        raise ValueError(f"need 0 <= k_prev < k_new, got {k_prev}, {k_new}")
    streams = RngStreams(seed)
    return [core.draw_initial_point(problem, streams, i) for i in range(k_new)]


class SnowballEngine:
    """Drives the outer loop and owns all cross-iteration state: the memo
    table, the adaptive kernel, the fresh-call counter and the growing
    initial live set.

    An engine whose ``run_next`` raised should be discarded; resume from
    the last checkpoint instead.
    """

    def __init__(
        self,
        config: SnowballConfig,
        *,
        memo: Optional[MemoTable] = None,
        reports: Optional[list[SnowballReport]] = None,
        sampler: Optional[SamplerState] = None,
    ):
        self.config = config
        self.problem = config.problem
        self.streams = RngStreams(config.seed)
        self.memo = memo if memo is not None else MemoTable()
        self.reports: list[SnowballReport] = list(reports or [])
        self.proposal = ProposalState.initial(self.problem.dim)
        self.call_index = 0
        if sampler is not None:
            self.proposal.scale = sampler.scale
            self.proposal.target_accept = sampler.target_accept
            self.proposal.gamma0 = sampler.gamma0
            self.proposal.kappa = sampler.kappa
            self.proposal.accept_history.extend(sampler.accept_history)
            self.call_index = sampler.call_index
        self.n_like_evals = (
            self.reports[-1].n_like_evals_cumulative if self.reports else 0
        )
        self._initial: list[Point] = []
        # Initial draws below this index were already counted in
        # n_like_evals (relevant when rebuilding the cache after a resume).
        self._counted_initial = (
            self.config.k_at(len(self.reports)) if self.reports else 0
        )

    @property
    def completed_outer_iterations(self) -> int:
        return len(self.reports)

    def sampler_state(self) -> SamplerState:
        return SamplerState(
            scale=self.proposal.scale,
            call_index=self.call_index,
            target_accept=self.proposal.target_accept,
            gamma0=self.proposal.gamma0,
            kappa=self.proposal.kappa,
            accept_history=list(self.proposal.accept_history),
        )

    def _initial_points(self, k: int) -> list[Point]:
        while len(self._initial) < k:
            i = len(self._initial)
            self._initial.append(core.draw_initial_point(self.problem, self.streams, i))
            if i >= self._counted_initial:
                self.n_like_evals += 1
        self._counted_initial = max(self._counted_initial, k)
        return self._initial[:k]

    def run_next(self) -> tuple[SnowballReport, InnerRunResult]:
        """Run the next outer iteration to termination and report it."""
        j = len(self.reports) + 1
        k = self.config.k_at(j)
        t0 = time.perf_counter()
        try:
            inner = self._run_inner(k)
        except LikelihoodError as exc:
            raise RunAbort(f"outer iteration {j} (K={k}) aborted: {exc}") from exc
        report = SnowballReport(
            outer_iteration=j,
            k=k,
            log_z=inner.estimate.log_z,
            log_z_err=inner.estimate.log_z_err,
            ess=inner.estimate.ess,
            n_dead=inner.n_loop_dead,
            n_like_evals_cumulative=self.n_like_evals,
            n_lrps_calls_new=inner.n_fresh_calls,
            n_memo_hits=inner.n_memo_hits,
            wall_seconds=time.perf_counter() - t0,
        )
        self.reports.append(report)
        log.info(
            "iteration %d: K=%d ln_z=%.4f +- %.4f ess=%.1f dead=%d fresh=%d hits=%d (%.2fs)",
            j, k, report.log_z, report.log_z_err, report.ess,
            report.n_dead, report.n_lrps_calls_new, report.n_memo_hits,
            report.wall_seconds,
        )
        return report, inner

    def run(self, n_iterations: Optional[int] = None) -> Iterator[tuple[SnowballReport, InnerRunResult]]:
        """Yield (report, inner result) pairs for the next iterations."""
        if n_iterations is None:
            n_iterations = self.config.max_outer_iterations - len(self.reports)
        for _ in range(n_iterations):
            yield self.run_next()

    def _run_inner(self, k: int) -> InnerRunResult:
        state = RunState(problem=self.problem, live=list(self._initial_points(k)))
        state.rng_state = {"master_seed": self.config.seed, "next_call_index": self.call_index + 1}
        self.proposal.cov_chol = lrps.kernel_factor(state.live)
        memo_on = self.config.memo_enabled
        n_hits = 0
        n_fresh = 0
        accept_fractions: list[float] = []

        def replace_worst(l_min: float, live: list[Point]) -> Point:
            nonlocal n_hits, n_fresh
            use_memo = memo_on and math.isfinite(l_min)
            if use_memo:
                hit = self.memo.lookup(l_min)
                # A hit is consumed only if it strictly clears the
                # threshold (plateau entries may sit exactly on it) and is
                # not already alive (possible only on plateaus).
                if (
                    hit is not None
                    and hit.point.logl > l_min
                    and hit.point.origin_id not in state.live_ids
                ):
                    n_hits += 1
                    return hit.point
            n = self.call_index + 1
            seed_point = lrps.choose_seed(
                live, self.streams.borrow(STREAM_SEED_CHOICE, n)
            )
            result = lrps.mcmc_walk(
                seed_point,
                l_min,
                self.config.m_steps,
                self.proposal,
                self.problem,
                self.streams.borrow(STREAM_WALK, n),
                new_origin_id=core.WALK_ID_BASE + n,
            )
            self.call_index = n
            self.n_like_evals += self.config.m_steps
            state.n_like_evals += self.config.m_steps
            state.n_lrps_calls += 1
            if use_memo:
                self.memo.put(l_min, result)
            lrps.adapt_scale(self.proposal, result, n)
            accept_fractions.append(result.accepted_fraction)
            n_fresh += 1
            return result.point

        termination = "max_dead"
        while len(state.dead) < core.MAX_DEAD_POINTS:
            core.ns_step(state, replace_worst)
            if len(state.dead) % k == 0:
                # Refresh the kernel shape once per live-set sweep (one
                # volume e-fold).  Memoized replacements advance the volume
                # like fresh ones, so the cadence counts every step.
                self.proposal.cov_chol = lrps.kernel_factor(state.live)
            if core.termination_check(state, self.config.term_epsilon):
                termination = "converged"
                break
        n_loop_dead = len(state.dead)
        estimate, records, weights = core.finalize_run(state)
        return InnerRunResult(
            estimate=estimate,
            records=records,
            weights=weights,
            n_loop_dead=n_loop_dead,
            n_memo_hits=n_hits,
            n_fresh_calls=n_fresh,
            accept_fractions=accept_fractions,
            termination=termination,
        )


def snowball_run(config: SnowballConfig) -> Iterator[SnowballReport]:
    """Run the snowball loop, yielding one report per outer iteration."""
    engine = SnowballEngine(config)
    for _ in range(config.max_outer_iterations):
        report, _ = engine.run_next()
        yield report


def single_run(
    problem: Problem,
    k: int,
    m_steps: int,
    seed: int,
    term_epsilon: float = 1e-6,
) -> tuple[SnowballReport, InnerRunResult]:
    """One plain nested-sampling run (a one-iteration snowball)."""
    config = SnowballConfig(
        problem=problem,
        k0=k,
        k_inc=1,
        m_steps=m_steps,
        max_outer_iterations=1,
        seed=seed,
        term_epsilon=term_epsilon,
    )
    return SnowballEngine(config).run_next()
