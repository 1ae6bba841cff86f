"""
Command-line entry points: simulate, train, evaluate, report.

Exit codes:
    0  success
    1  unexpected failure
    2  configuration or usage error
    3  runtime invariant violation
    4  incompatible or incomplete archives
"""

import argparse
import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from .agents import load_policy
from .archive import check_compatible, read_archive, read_trials, trial_dir, write_summary_csv
from .config import (
    ABLATIONS, METHODS, ExperimentConfig, TimingConfig, VehicleDynamics, apply_overrides,
    load_config, reference_config, resolve_dynamics, validate_dynamics,
)
from .models import (
    METRIC_NAMES, ConfigError, IncompatibleArchivesError, InvariantViolation, MetricsReport,
    RoutingError,
)
from .reporting import compute_gap, render_report, report_table, summarize_trials

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_ARCHIVE = 4

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEFAULT_OUTPUT_DIR = "outputs"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatlab",
        description="Grounded sim-to-real transfer for multi-agent traffic signal control",
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default: GATLAB_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Run the fixed-cycle baseline and print the five metrics")
    sim.add_argument("--config", help="Experiment config JSON (grid, flow and timing are used)")
    sim.add_argument("--rows", type=int, default=1)
    sim.add_argument("--cols", type=int, default=3)
    sim.add_argument("--dynamics", default="default", help="Preset name: default, rainy or snowy")
    sim.add_argument("--accel", type=float, help="Inline dynamics: acceleration (m/s^2)")
    sim.add_argument("--decel", type=float, help="Inline dynamics: deceleration (m/s^2)")
    sim.add_argument("--emergency-decel", type=float, help="Inline dynamics: emergency deceleration (m/s^2)")
    sim.add_argument("--startup-delay", type=float, default=0.0, help="Inline dynamics: startup delay (s)")
    sim.add_argument("--horizon", type=float, help="Episode length in seconds")
    sim.add_argument("--cycle", type=float, default=30.0, help="Fixed-cycle phase duration (s)")
    sim.add_argument("--trace", help="Write the per-step trace CSV to this path")

    train = sub.add_parser("train", help="Run grounded training trials and write an archive")
    train.add_argument("--config", help="Experiment config JSON (default: reference 1x3 config)")
    train.add_argument("--rows", type=int, default=1)
    train.add_argument("--cols", type=int, default=3)
    train.add_argument("--real", default="rainy", help="Real-environment dynamics preset for the reference config")
    train.add_argument("--method", choices=METHODS)
    train.add_argument("--radius", type=int)
    train.add_argument("--ground-prob", type=float, dest="p_ground")
    train.add_argument("--trials", type=int)
    train.add_argument("--epochs", type=int, dest="gat_epochs")
    train.add_argument("--pretrain-episodes", type=int, dest="pretrain_episodes")
    train.add_argument("--seed", type=int, dest="base_seed")
    train.add_argument("--uq-base", choices=("pattern", "prob"), dest="uq_base")
    train.add_argument("--uq-threshold", type=float, dest="uq_threshold_override")
    train.add_argument("--ablate", choices=sorted(ABLATIONS), dest="ablation")
    train.add_argument("--out", help="Output directory (default: GATLAB_OUTPUT_DIR or ./outputs)")
    train.add_argument("--jobs", type=int, default=1, help="Trials run in parallel")

    ev = sub.add_parser("evaluate", help="Evaluate archived policy checkpoints in both environments")
    ev.add_argument("--archive", required=True, help="Method archive directory (<out>/<method>)")
    ev.add_argument("--trial", type=int, default=0)
    ev.add_argument("--checkpoint", choices=("best", "pretrained"), default="best")

    rep = sub.add_parser("report", help="Compare archives in a mean(gap)±std table")
    rep.add_argument("archives", nargs="+", help="Method archive directories")
    rep.add_argument("--out", help="Directory for report.txt and report.csv")

    return parser


# ============================================================
# HELPERS
# ============================================================

def _configure_logging(level: Optional[str]) -> None:
    name = (level or os.getenv("GATLAB_LOG_LEVEL") or "INFO").upper()
    if not isinstance(logging.getLevelName(name), int):
        raise ConfigError(f"Unknown log level: {name}", offending_keys=["log_level"])
    logging.basicConfig(level=name, format=LOG_FORMAT)


def _print_metrics(title: str, report: MetricsReport) -> None:
    print(title)
    for name in METRIC_NAMES:
        if name == "throughput":
            print(f"  {name:<10} {report.throughput}")
        else:
            print(f"  {name:<10} {report.get(name):.4f}")


def _inline_dynamics(args: argparse.Namespace) -> Optional[VehicleDynamics]:
    inline = (args.accel, args.decel, args.emergency_decel)
    if all(v is None for v in inline):
        return None
    if any(v is None for v in inline):
        raise ConfigError(
            "Inline dynamics need --accel, --decel and --emergency-decel together",
            offending_keys=["accel", "decel", "emergency_decel"],
        )
    dynamics = VehicleDynamics(
        accel=args.accel, decel=args.decel,
        emergency_decel=args.emergency_decel, startup_delay=args.startup_delay,
    )
    problems = validate_dynamics(dynamics)
    if problems:
        raise ConfigError(f"Invalid inline dynamics: {problems}", offending_keys=problems)
    return dynamics


def _base_config(args: argparse.Namespace, horizon: Optional[float] = None) -> ExperimentConfig:
    if args.config:
        config = load_config(args.config)
        if horizon is not None:
            config = replace(config, timing=replace(config.timing, horizon=horizon))
        return config
    timing = TimingConfig() if horizon is None else TimingConfig(horizon=horizon)
    return reference_config(rows=args.rows, cols=args.cols, real=getattr(args, "real", "rainy"), timing=timing)


# ============================================================
# COMMANDS
# ============================================================

def cmd_simulate(args: argparse.Namespace) -> int:
    from .simcore import run_fixed_cycle

    if args.horizon is not None and args.horizon < 0:
        raise ConfigError("Horizon must be non-negative", offending_keys=["horizon"])
    dynamics = _inline_dynamics(args) or resolve_dynamics(args.dynamics)
    config = _base_config(args, horizon=args.horizon)
    sim = run_fixed_cycle(
        config.grid, config.flow, dynamics, config.timing, cycle=args.cycle, trace=bool(args.trace),
    )
    report = sim.metrics(config.timing.horizon)
    _print_metrics(f"Fixed-cycle baseline ({config.grid.rows}x{config.grid.cols}, {dynamics})", report)
    if args.trace:
        sim.write_trace(args.trace)
        logger.info(f"Trace written: {args.trace}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from .harness import run_trials

    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1", offending_keys=["jobs"])
    overrides = {
        "method": args.method,
        "radius": args.radius,
        "p_ground": args.p_ground,
        "trials": args.trials,
        "gat_epochs": args.gat_epochs,
        "pretrain_episodes": args.pretrain_episodes,
        "base_seed": args.base_seed,
        "uq_base": args.uq_base,
        "uq_threshold_override": args.uq_threshold_override,
        "ablation": args.ablation,
    }
    # overrides are checked before any trial starts
    config = apply_overrides(_base_config(args), overrides)
    out_dir = args.out or os.getenv("GATLAB_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR
    result = run_trials(config, out_dir=out_dir, jobs=args.jobs)
    print(f"Archive: {result.method_dir}")
    print(render_report(report_table({config.method: result.summary})), end="")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    from .harness import evaluate_policies

    info = read_archive(Path(args.archive))
    if not 0 <= args.trial < info.config.trials:
        raise ConfigError(f"Archive has no trial {args.trial}", offending_keys=["trial"])
    folder = trial_dir(info.path, args.trial) / "checkpoints" / args.checkpoint
    policies = []
    for i in range(info.config.grid.num_intersections):
        path = folder / f"agent-{i}.txt"
        if not path.exists():
            raise IncompatibleArchivesError(f"Missing checkpoint: {path}")
        policies.append(load_policy(path.read_text(encoding="utf-8"), info.config.dqn))
    result = evaluate_policies(info.config, policies)
    gap = compute_gap(result.real, result.sim)
    _print_metrics("E_sim", result.sim)
    _print_metrics("E_real", result.real)
    print("Gap (real - sim)")
    for name in METRIC_NAMES:
        print(f"  {name:<10} {gap.delta(name):.4f}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    infos = [read_archive(Path(p)) for p in args.archives]
    check_compatible(infos)
    rows_by_method = {}
    all_rows = []
    for info in infos:
        label = info.method
        if label in rows_by_method:
            label = f"{info.method} ({info.path})"
        rows = summarize_trials(info.method, read_trials(info))
        rows_by_method[label] = rows
        all_rows.extend(rows)
    text = render_report(report_table(rows_by_method))
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text, encoding="utf-8")
        write_summary_csv(out / "report.csv", all_rows)
        logger.info(f"Report written: {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 for --help
        return int(e.code or 0)

    try:
        _configure_logging(args.log_level)
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e} (offending keys: {e.offending_keys})")
        return EXIT_CONFIG
    except (InvariantViolation, RoutingError) as e:
        logger.error(f"Invariant violation: {e}")
        return EXIT_INVARIANT
    except IncompatibleArchivesError as e:
        logger.error(f"Archive error: {e}")
        return EXIT_ARCHIVE
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return EXIT_FAILURE
