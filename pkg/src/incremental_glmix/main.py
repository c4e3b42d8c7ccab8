import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from pydantic import ValidationError

from incremental_glmix.constants import (
    DEFAULT_COLD_PERIOD,
    DEFAULT_DFP_MEMORY,
    ExitCode,
    HessianMode,
    ReportFormat,
    Strategy,
)
from incremental_glmix.core.models import PhaseDataset
from incremental_glmix.errors import (
    DataValidationError,
    GlmixError,
    NumericalError,
    StoreIntegrityError,
    StoreVersionError,
    TrainingFailure,
)
from incremental_glmix.evaluation.benchmark import run_benchmark, tune_forgetting_factor
from incremental_glmix.evaluation.drift import generate_drift_stream
from incremental_glmix.evaluation.metrics import model_auc
from incremental_glmix.evaluation.reports import rounds_frame, write_frame
from incremental_glmix.persistence.dataset_files import load_stream, write_stream
from incremental_glmix.persistence.store import latest_round, load_round, round_dir
from incremental_glmix.scheduler import (
    RoundReport,
    StreamState,
    restore_state,
    run_stream,
    step,
)
from incremental_glmix.schemas import (
    AdamConfig,
    BenchmarkConfig,
    DriftGenConfig,
    OptimizerConfig,
    ScheduleConfig,
    TrainerConfig,
)


logger = logging.getLogger(__name__)

TRUTH_FILE = "truth.json"


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", type=Path, default=Path("data"), help="phase files directory")
    common.add_argument("--store", type=Path, default=None, help="model store directory")
    common.add_argument(
        "--hessian",
        choices=[m.value for m in HessianMode],
        default=HessianMode.DIAG.value,
        help="precision representation chained between rounds",
    )
    common.add_argument("--forgetting-factor", type=float, default=1.0, help="lambda_f")
    common.add_argument("--dfp-memory", type=int, default=DEFAULT_DFP_MEMORY)
    common.add_argument("--cold-period", type=int, default=DEFAULT_COLD_PERIOD)
    common.add_argument("--cold-window", type=int, default=None)
    common.add_argument("--l2", type=float, default=1.0, help="cold-start prior precision")
    common.add_argument("--max-iter", type=int, default=100)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument(
        "--report", choices=[f.value for f in ReportFormat], default=ReportFormat.BOTH.value
    )
    common.add_argument("--output", type=Path, default=Path("reports"), help="reports directory")
    common.add_argument(
        "--entity-types", nargs="+", default=["member"], help="random-effect entity types"
    )
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_arguments()
    parser = argparse.ArgumentParser(
        prog="incremental-glmix",
        description="Incremental training of logistic-regression and GLMix models",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train_cold = commands.add_parser(
        "train-cold", parents=[common], help="cold start on the window ending at a phase"
    )
    train_cold.add_argument("--phase", type=int, default=None, help="defaults to the last phase")

    train_incre = commands.add_parser(
        "train-incre", parents=[common], help="incremental update on one phase"
    )
    train_incre.add_argument("--phase", type=int, default=None, help="defaults to the last phase")

    evaluate = commands.add_parser("evaluate", parents=[common], help="AUC of a stored round")
    evaluate.add_argument("--phase", type=int, required=True, help="phase to evaluate on")
    evaluate.add_argument("--round", type=int, default=None, help="defaults to the newest round")

    simulate = commands.add_parser(
        "simulate-stream", parents=[common], help="periodic cold start over every phase"
    )
    simulate.add_argument("--resume", action="store_true", help="continue from the store")

    generate = commands.add_parser(
        "generate-data", parents=[common], help="write a synthetic drifting stream"
    )
    generate.add_argument("--n-entities", type=int, default=DriftGenConfig().n_entities)
    generate.add_argument("--feature-dim", type=int, default=DriftGenConfig().feature_dim)
    generate.add_argument(
        "--examples-per-phase", type=int, default=DriftGenConfig().examples_per_phase
    )
    generate.add_argument("--n-phases", type=int, default=DriftGenConfig().n_phases)
    generate.add_argument("--drift-rate", type=float, default=DriftGenConfig().drift_rate)
    generate.add_argument(
        "--activity-skew", type=float, default=DriftGenConfig().entity_activity_skew
    )

    benchmark = commands.add_parser(
        "benchmark", parents=[common], help="compare cold, warm and incremental strategies"
    )
    benchmark.add_argument(
        "--strategies",
        nargs="+",
        choices=[s.value for s in Strategy],
        default=[s.value for s in Strategy],
    )
    benchmark.add_argument(
        "--update-fixed", action="store_true", help="also update the fixed effect"
    )
    benchmark.add_argument(
        "--tune",
        choices=[s.value for s in Strategy if s.hessian_mode is not None],
        default=None,
        help="grid search the forgetting factor of this strategy",
    )
    benchmark.add_argument("--grid", type=float, nargs="+", default=None)
    return parser


def trainer_config(args: argparse.Namespace) -> TrainerConfig:
    return TrainerConfig(
        l2_base=args.l2,
        lambda_f=args.forgetting_factor,
        hessian_mode=HessianMode(args.hessian),
        optimizer=OptimizerConfig(
            max_iterations=args.max_iter,
            dfp_memory=args.dfp_memory,
            adam=AdamConfig(shuffle_seed=args.seed),
        ),
    )


def schedule_config(args: argparse.Namespace) -> ScheduleConfig:
    return ScheduleConfig(
        cold_period=args.cold_period,
        cold_window=args.cold_window,
        entity_types=tuple(args.entity_types),
        trainer=trainer_config(args),
    )


def _require_store(args: argparse.Namespace) -> Path:
    if args.store is None:
        raise DataValidationError(f"{args.command} needs --store")
    return args.store


def _phase(stream: list[PhaseDataset], phase: int | None) -> PhaseDataset:
    t = len(stream) - 1 if phase is None else phase
    if not 0 <= t < len(stream):
        raise DataValidationError(f"phase {t} is not in the stream of {len(stream)} phases")
    return stream[t]


def _write_rounds(args: argparse.Namespace, name: str, reports: list[RoundReport]):
    write_frame(rounds_frame(reports), args.output / name, ReportFormat(args.report))


def _check_round(report: RoundReport):
    if report.error is not None:
        raise report.error
    if report.failed:
        raise TrainingFailure(f"round {report.t} failed: {report.failure}")


def train_cold(args: argparse.Namespace):
    store = _require_store(args)
    config = schedule_config(args)
    stream = load_stream(args.data)
    d_t = _phase(stream, args.phase)
    buffer = tuple(stream[: d_t.phase_index])[-config.window :]
    state = StreamState(t=d_t.phase_index, history_buffer=buffer)

    _, report = step(state, d_t, config, store)
    _check_round(report)
    _write_rounds(args, f"train_cold_{d_t.phase_index}", [report])
    print(f"cold round {d_t.phase_index}: objective {report.objective:.6f}")


def train_incre(args: argparse.Namespace):
    store = _require_store(args)
    config = schedule_config(args)
    stream = load_stream(args.data)
    d_t = _phase(stream, args.phase)

    state = restore_state(latest_round(store, before=d_t.phase_index), ())
    state = replace(state, t=d_t.phase_index, counter=max(state.counter, 1))
    _, report = step(state, d_t, config, store)
    _check_round(report)
    _write_rounds(args, f"train_incre_{d_t.phase_index}", [report])
    print(f"incremental round {d_t.phase_index}: objective {report.objective:.6f}")


def evaluate(args: argparse.Namespace):
    store = _require_store(args)
    stream = load_stream(args.data)
    d_t = _phase(stream, args.phase)
    path = latest_round(store) if args.round is None else round_dir(store, args.round)

    stored = load_round(path)
    value = model_auc(stored.model, d_t)
    print(f"round {stored.meta.t} on phase {d_t.phase_index}: AUC {value:.6f}")


def simulate_stream(args: argparse.Namespace):
    config = schedule_config(args)
    stream = load_stream(args.data)

    state = None
    if args.resume:
        path = latest_round(_require_store(args))
        t = load_round(path).meta.t
        state = restore_state(path, stream[: t + 1])
        logger.info("Resuming after round %d", t)

    reports = []
    run_stream(stream[state.t if state else 0 :], config, reports.append, args.store, state)
    _write_rounds(args, "rounds", reports)
    failed = sum(r.failed for r in reports)
    print(f"{len(reports)} rounds, {failed} failed")


def generate_data(args: argparse.Namespace):
    config = DriftGenConfig(
        seed=args.seed,
        n_entities=args.n_entities,
        feature_dim=args.feature_dim,
        examples_per_phase=args.examples_per_phase,
        n_phases=args.n_phases,
        drift_rate=args.drift_rate,
        entity_activity_skew=args.activity_skew,
        entity_type=args.entity_types[0],
    )
    drift = generate_drift_stream(config)
    write_stream(drift.phases, args.data)
    truth = {
        "config": config.model_dump(mode="json"),
        "phases": [p.as_record() for p in drift.truth],
    }
    (args.data / TRUTH_FILE).write_text(json.dumps(truth), encoding="utf-8")
    print(f"{len(drift)} phases written to {args.data}")


def benchmark(args: argparse.Namespace):
    grid = {"forgetting_grid": tuple(args.grid)} if args.grid else {}
    config = BenchmarkConfig(
        strategies=tuple(Strategy(s) for s in args.strategies),
        cold_window=args.cold_window,
        entity_types=tuple(args.entity_types),
        update_fixed_incrementally=args.update_fixed,
        trainer=trainer_config(args),
        **grid,
    )
    stream = load_stream(args.data)
    report = run_benchmark(stream, config, args.store)

    report_format = ReportFormat(args.report)
    write_frame(report.rows, args.output / "benchmark", report_format, report.to_markdown())
    write_frame(report.summary(), args.output / "benchmark_summary", report_format)
    if args.tune:
        search = tune_forgetting_factor(stream, Strategy(args.tune), None, config)
        print(f"best forgetting factor for {args.tune}: {search.best}")
    print(report.summary().to_string(index=False))


COMMANDS = {
    "train-cold": train_cold,
    "train-incre": train_incre,
    "evaluate": evaluate,
    "simulate-stream": simulate_stream,
    "generate-data": generate_data,
    "benchmark": benchmark,
}


def _configure_logging(args: argparse.Namespace):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run(argv: list[str] | None = None) -> ExitCode:
    """Parse the arguments, run one command and map its errors to an exit code"""
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        COMMANDS[args.command](args)
    except (StoreVersionError, StoreIntegrityError) as error:
        logger.error("Store error: %s", error)
        return ExitCode.STORE_VERSION_ERROR
    except (NumericalError, TrainingFailure) as error:
        logger.error("Numerical error: %s", error)
        return ExitCode.NUMERICAL_ERROR
    except GlmixError as error:
        logger.error("Invalid input: %s", error)
        return ExitCode.VALIDATION_ERROR
    except ValidationError as error:
        logger.error("Invalid configuration: %s", error)
        return ExitCode.VALIDATION_ERROR
    except OSError as error:
        logger.error("%s", error)
        return ExitCode.FAILURE
    return ExitCode.SUCCESS


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
