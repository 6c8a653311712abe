"""Snowballing nested sampling.

Bayesian evidence and posterior samples from nested sampling wrapped in
an outer loop that keeps growing the live-point count, reusing earlier
work through prefix-stable initial draws and a memoized
likelihood-restricted sampler.  Runs are deterministic for a given seed
and resumable from binary checkpoints.
"""

from .core import (
    DeadRecord,
    EvidenceEstimate,
    LikelihoodError,
    Point,
    RunState,
    ess,
    finalize_run,
    init_live_set,
    log_prior_volume,
    ns_step,
    termination_check,
    write_dead_csv,
)
from .lrps import (
    ProposalState,
    WalkResult,
    adapt_scale,
    choose_seed,
    live_covariance,
    mcmc_walk,
    reflect_into_cube,
)
from .persistence import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .problems import Problem, available_problems, get_problem
from .rng import RngStreams
from .snowball import (
    MemoTable,
    RunAbort,
    SnowballConfig,
    SnowballEngine,
    SnowballReport,
    extend_initial,
    single_run,
    snowball_run,
)

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "DeadRecord",
    "EvidenceEstimate",
    "LikelihoodError",
    "MemoTable",
    "Point",
    "Problem",
    "ProposalState",
    "RngStreams",
    "RunAbort",
    "RunState",
    "SnowballConfig",
    "SnowballEngine",
    "SnowballReport",
    "WalkResult",
    "adapt_scale",
    "available_problems",
    "choose_seed",
    "ess",
    "extend_initial",
    "finalize_run",
    "get_problem",
    "init_live_set",
    "live_covariance",
    "load_checkpoint",
    "log_prior_volume",
    "mcmc_walk",
    "ns_step",
    "reflect_into_cube",
    "save_checkpoint",
    "single_run",
    "snowball_run",
    "termination_check",
    "write_dead_csv",
    "__version__",
]
