"""Command-line front end: configure runs, trace results, resume checkpoints.

Every run directory receives a manifest (written before the run starts),
a JSON Lines report stream, the posterior sample table, a checkpoint per
completed outer iteration and a rendered evidence-trace figure.  Exit
codes: 0 success, 1 usage or configuration error, 2 aborted run.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import LikelihoodError, write_dead_csv
from .persistence import (
    CHECKPOINT_SUFFIX,
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .problems import available_problems, get_problem
from .snowball import RunAbort, SnowballConfig, SnowballEngine
from .plotting import render_trace_figure

log = logging.getLogger("snowball_ns")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2

LOCK_NAME = ".run.lock"
CHECKPOINT_NAME = "checkpoint" + CHECKPOINT_SUFFIX
_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want code 1
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="snowball-ns",
        description="Nested sampling with a snowballing live-point set.",
    )
    parser.add_argument("--version", action="version", version=f"snowball-ns {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="start a new run in an empty directory")
    run.add_argument("--problem", required=True, choices=available_problems())
    run.add_argument("--dim", required=True, type=int, help="parameter dimension")
    run.add_argument("--k0", type=int, default=20, help="initial live-point count")
    run.add_argument("--k-inc", type=int, default=20, help="live-point increment per outer iteration")
    run.add_argument("--steps", type=int, default=20, help="MCMC transitions per sampler call")
    run.add_argument("--term-eps", type=float, default=1e-6, help="live-contribution termination ratio")
    run.add_argument("--iters", required=True, type=int, help="number of outer iterations")
    run.add_argument("--seed", type=int, default=0, help="master RNG seed")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--sigma", type=float, default=0.1, help="gaussian problem width")
    run.add_argument("--const-logl", type=float, default=0.0, help="constant problem log-likelihood")
    run.add_argument("--lo", type=float, default=-10.0, help="prior box lower bound")
    run.add_argument("--hi", type=float, default=10.0, help="prior box upper bound")
    run.add_argument("--no-memo", action="store_true", help="disable sampler memoization (independent runs)")
    run.add_argument("--no-plot", action="store_true", help="skip rendering trace.png")
    run.set_defaults(func=cmd_run)

    trace = sub.add_parser("trace", help="emit plot-ready evidence trace data from reports.jsonl")
    trace.add_argument("reports", help="run directory or reports.jsonl file")
    trace.add_argument("--format", choices=("csv", "table"), default="csv")
    trace.add_argument("--out", help="write the trace table here instead of stdout")
    trace.add_argument("--steps", type=int, help="M used in the 1/(M*K) fit (default: from manifest)")
    trace.add_argument("--plot", help="render the trace figure to this file")
    trace.add_argument("--no-plot", action="store_true", help="skip the figure even when --out is given")
    trace.set_defaults(func=cmd_trace)

    resume = sub.add_parser("resume", help="continue a checkpointed run")
    resume.add_argument("--out", required=True, help="run directory holding the checkpoint")
    resume.add_argument("--iters", required=True, type=int, help="additional outer iterations")
    for flag, kind in (
        ("--problem", str), ("--dim", int), ("--seed", int), ("--k0", int),
        ("--k-inc", int), ("--steps", int), ("--term-eps", float),
        ("--sigma", float), ("--const-logl", float), ("--lo", float), ("--hi", float),
    ):
        resume.add_argument(flag, type=kind, default=None,
                            help="must match the checkpoint if given")
    resume.add_argument("--no-plot", action="store_true", help="skip rendering trace.png")
    resume.set_defaults(func=cmd_resume)
    return parser


@contextlib.contextmanager
def _run_lock(out_dir: Path):
    # One run per output directory; stale locks must be removed by hand.
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(
            f"{lock} exists: another run owns this directory "
            "(remove the lock file if that run is dead)"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            os.unlink(lock)


def _build_problem(args):
    if args.problem == "gaussian":
        params = {"sigma": args.sigma, "lo": args.lo, "hi": args.hi}
    elif args.problem == "constant":
        params = {"const_logl": args.const_logl, "lo": args.lo, "hi": args.hi}
    else:
        params = {"lo": args.lo, "hi": args.hi}
    return get_problem(args.problem, args.dim, **params)


def _write_manifest(out_dir: Path, config: SnowballConfig) -> None:
    manifest = {
        "tool": "snowball-ns",
        "version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "out_dir": str(out_dir.resolve()),
        "problem": {
            "name": config.problem.name,
            "dim": config.problem.dim,
            "params": dict(sorted(config.problem.params.items())),
        },
        "config": {
            "k0": config.k0,
            "k_inc": config.k_inc,
            "steps": config.m_steps,
            "term_eps": config.term_epsilon,
            "iters": config.max_outer_iterations,
            "seed": config.seed,
            "memo_enabled": config.memo_enabled,
        },
        "metadata": {
            # Recorded implementation choices a reproduction needs to know.
            "volume_rule": "deterministic:(K-1)/K",
            "adaptation_carryover": True,
            "memo_key": "float64-bit-pattern",
            "rng": "philox-counter-based",
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _write_posterior(path: Path, inner) -> None:
    tmp = path.with_suffix(".csv.tmp")
    with open(tmp, "w") as fh:
        write_dead_csv(inner.records, fh, weights=inner.weights)
    os.replace(tmp, path)


def _render_run_figure(out_dir: Path, reports, m_steps: int) -> None:
    iterations = [r.outer_iteration for r in reports]
    log_z = [r.log_z for r in reports]
    log_z_err = [r.log_z_err for r in reports]
    fit_vals = None
    label = None
    if len(reports) >= 2:
        ks = np.array([r.k for r in reports], dtype=float)
        a, b = _fit_inverse_mk(ks, np.array(log_z), m_steps)
        fit_vals = a + b / (m_steps * ks)
        label = f"{a:.3f} + {b:.3g}/(MK)"
    render_trace_figure(
        iterations, log_z, log_z_err, out_dir / "trace.png",
        fit_log_z=fit_vals, fit_label=label, title="evidence trace",
    )


def _fit_inverse_mk(ks: np.ndarray, log_z: np.ndarray, m_steps: int) -> tuple[float, float]:
    """Least-squares fit of log_z = a + b / (m_steps * K); returns (a, b)."""
    x = 1.0 / (m_steps * ks)
    slope, intercept = np.polyfit(x, log_z, 1)
    return float(intercept), float(slope)


def _drive(engine: SnowballEngine, out_dir: Path, reports_fh, n_iterations: int) -> None:
    ckpt_path = out_dir / CHECKPOINT_NAME
    for _ in range(n_iterations):
        report, inner = engine.run_next()
        reports_fh.write(json.dumps(report.to_json_dict()) + "\n")
        reports_fh.flush()
        _write_posterior(out_dir / "posterior.csv", inner)
        save_checkpoint(Checkpoint.from_engine(engine), ckpt_path)


def cmd_run(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if (out_dir / CHECKPOINT_NAME).exists():
        raise UsageError(
            f"{out_dir} already contains a checkpointed run; use 'resume' "
            "or point --out at a fresh directory"
        )
    try:
        problem = _build_problem(args)
        config = SnowballConfig(
            problem=problem,
            k0=args.k0,
            k_inc=args.k_inc,
            m_steps=args.steps,
            max_outer_iterations=args.iters,
            seed=args.seed,
            term_epsilon=args.term_eps,
            memo_enabled=not args.no_memo,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not os.access(out_dir, os.W_OK):
        raise UsageError(f"output directory {out_dir} is not writable")
    _write_manifest(out_dir, config)
    with _run_lock(out_dir):
        engine = SnowballEngine(config)
        with open(out_dir / "reports.jsonl", "w") as fh:
            _drive(engine, out_dir, fh, args.iters)
        if not args.no_plot:
            _render_run_figure(out_dir, engine.reports, config.m_steps)
    return EXIT_OK


def cmd_resume(args) -> int:
    out_dir = Path(args.out)
    ckpt_path = out_dir / CHECKPOINT_NAME
    if not ckpt_path.exists():
        raise UsageError(f"no checkpoint at {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    _check_resume_conflicts(args, ckpt)
    target = ckpt.completed_outer_iterations + args.iters
    config = dataclasses.replace(
        ckpt.config,
        max_outer_iterations=max(target, ckpt.config.max_outer_iterations),
    )
    with _run_lock(out_dir):
        engine = SnowballEngine(
            config, memo=ckpt.memo, reports=list(ckpt.reports), sampler=ckpt.sampler
        )
        reports_path = out_dir / "reports.jsonl"
        if not reports_path.exists():
            # Reconstruct the completed part of the stream from the checkpoint.
            with open(reports_path, "w") as fh:
                for report in ckpt.reports:
                    fh.write(json.dumps(report.to_json_dict()) + "\n")
        with open(reports_path, "a") as fh:
            _drive(engine, out_dir, fh, args.iters)
        if not args.no_plot:
            _render_run_figure(out_dir, engine.reports, config.m_steps)
    return EXIT_OK


def _check_resume_conflicts(args, ckpt: Checkpoint) -> None:
    cfg = ckpt.config
    params = cfg.problem.params
    checks = [
        ("--problem", args.problem, cfg.problem.name),
        ("--dim", args.dim, cfg.problem.dim),
        ("--seed", args.seed, cfg.seed),
        ("--k0", args.k0, cfg.k0),
        ("--k-inc", args.k_inc, cfg.k_inc),
        ("--steps", args.steps, cfg.m_steps),
        ("--term-eps", args.term_eps, cfg.term_epsilon),
        ("--sigma", args.sigma, params.get("sigma")),
        ("--const-logl", args.const_logl, params.get("const_logl")),
        ("--lo", args.lo, params.get("lo")),
        ("--hi", args.hi, params.get("hi")),
    ]
    for flag, given, stored in checks:
        if given is not None and given != stored:
            raise UsageError(
                f"refusing to resume: {flag}={given} conflicts with the "
                f"checkpointed value {stored}"
            )


def _parse_reports_jsonl(path: Path) -> list[dict]:
    rows = []
    required = ("outer_iteration", "k", "log_z", "log_z_err")
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}: parse error at line {lineno}: {exc.msg}") from None
            missing = [k for k in required if k not in obj]
            if missing:
                raise UsageError(
                    f"{path}: line {lineno} is missing field(s) {', '.join(missing)}"
                )
            rows.append(obj)
    return rows


def _resolve_m_steps(args, reports_file: Path) -> int:
    if args.steps is not None:
        return args.steps
    manifest_path = reports_file.parent / "manifest.json"
    if manifest_path.exists():
        try:
            with open(manifest_path) as fh:
                return int(json.load(fh)["config"]["steps"])
        except (OSError, KeyError, ValueError, json.JSONDecodeError):
            pass
    print(
        "notice: M unknown (no manifest, no --steps); fitting against 1/K "
        "so the reported b absorbs M",
        file=sys.stderr,
    )
    return 1


def _format_trace(rows: list[dict], fit, fmt: str) -> str:
    header = ["outer_iteration", "log_z", "log_z_err"]
    if fit is not None:
        header.append("fit_log_z")
    table = []
    for i, row in enumerate(rows):
        cells = [
            str(row["outer_iteration"]),
            format(float(row["log_z"]), ".17g"),
            format(float(row["log_z_err"]), ".17g"),
        ]
        if fit is not None:
            cells.append(format(fit[2][i], ".17g"))
        table.append(cells)
    lines = []
    if fmt == "csv":
        lines.append(",".join(header))
        lines.extend(",".join(cells) for cells in table)
    else:
        widths = [
            max(len(header[c]), max(len(row[c]) for row in table))
            for c in range(len(header))
        ]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.extend(
            "  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in table
        )
    if fit is not None:
        a, b, _ = fit
        lines.append(f"# fit: log_z = a + b/(M*K) with a={a:.17g} b={b:.17g}")
    return "\n".join(lines) + "\n"


def cmd_trace(args) -> int:
    src = Path(args.reports)
    reports_file = src / "reports.jsonl" if src.is_dir() else src
    if not reports_file.exists():
        raise UsageError(f"no report stream at {reports_file}")
    rows = _parse_reports_jsonl(reports_file)
    if not rows:
        raise UsageError(f"{reports_file} holds no reports")
    m_steps = _resolve_m_steps(args, reports_file)
    fit = None
    if len(rows) >= 2:
        ks = np.array([row["k"] for row in rows], dtype=float)
        log_z = np.array([row["log_z"] for row in rows], dtype=float)
        a, b = _fit_inverse_mk(ks, log_z, m_steps)
        fit = (a, b, a + b / (m_steps * ks))
    else:
        print("notice: single report; skipping the 1/(M*K) fit", file=sys.stderr)
    text = _format_trace(rows, fit, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    plot_path = None
    if args.plot:
        plot_path = Path(args.plot)
    elif args.out and not args.no_plot:
        plot_path = Path(args.out).with_suffix(".png")
    if plot_path is not None:
        render_trace_figure(
            [row["outer_iteration"] for row in rows],
            [row["log_z"] for row in rows],
            [row["log_z_err"] for row in rows],
            plot_path,
            fit_log_z=None if fit is None else fit[2],
            fit_label=None if fit is None else f"{fit[0]:.3f} + {fit[1]:.3g}/(MK)",
        )
    return EXIT_OK


def _setup_logging() -> None:
    level_name = os.environ.get("SNOWBALL_NS_LOG", "warn").lower()
    level = _LOG_LEVELS.get(level_name)
    if level is None:
        print(
            f"warning: SNOWBALL_NS_LOG={level_name!r} not one of "
            f"{'|'.join(_LOG_LEVELS)}; using 'warn'",
            file=sys.stderr,
        )
        level = logging.WARNING
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)
    log.setLevel(level)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunAbort, LikelihoodError) as exc:
        log.error("run aborted: %s", exc)
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except KeyboardInterrupt:
        print("interrupted; resume from the last checkpoint", file=sys.stderr)
        return EXIT_ABORT


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
