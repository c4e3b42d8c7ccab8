import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from incremental_glmix.constants import FIXED_COMPONENT, HessianMode, Strategy, TrainModeKind
from incremental_glmix.core.models import GlmixModel, PhaseDataset
from incremental_glmix.errors import DataValidationError, GlmixError
from incremental_glmix.evaluation.metrics import model_auc
from incremental_glmix.evaluation.reports import markdown_table
from incremental_glmix.persistence.store import load_round, round_dir, save_round
from incremental_glmix.schemas import BcdSchedule, BenchmarkConfig, ScheduleConfig, TrainerConfig
from incremental_glmix.trainer import BcdResult, GlmixPriors, block_coordinate_descent


logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "phase",
    "strategy",
    "test_auc",
    "fit_seconds",
    "load_seconds",
    "save_seconds",
    "failed",
)
SUMMARY_COLUMNS = (
    "strategy",
    "mean_auc",
    "auc_change_vs_cold_pct",
    "fit_seconds",
    "load_seconds",
    "save_seconds",
    "failed_phases",
)
TIMING_COLUMNS = ("fit_seconds", "load_seconds", "save_seconds")


@dataclass(frozen=True, eq=False)
class BenchmarkReport:
    """One row per evaluated phase and strategy

    Attributes
    ----------
    rows : pd.DataFrame
        Columns phase, strategy, test_auc, fit_seconds, load_seconds, save_seconds and
        failed. The phase is the evaluation phase, the model was trained through the
        phase before it. Failed rows carry a NaN AUC
    """

    rows: pd.DataFrame

    @property
    def strategies(self) -> list[str]:
        return list(dict.fromkeys(self.rows["strategy"]))

    def mean_auc(self, strategy: Strategy | str) -> float:
        name = strategy.value if isinstance(strategy, Strategy) else strategy
        return float(self.rows.loc[self.rows["strategy"] == name, "test_auc"].mean())

    def summary(self) -> pd.DataFrame:
        """Mean AUC, relative change against cold start in percent and total timings"""
        grouped = self.rows.groupby("strategy", sort=False)
        summary = grouped[list(TIMING_COLUMNS)].sum()
        summary["mean_auc"] = grouped["test_auc"].mean()
        summary["failed_phases"] = grouped["failed"].sum().astype(int)
        cold = summary["mean_auc"].get(Strategy.COLD.value, np.nan)
        summary["auc_change_vs_cold_pct"] = 100.0 * (summary["mean_auc"] - cold) / cold
        return summary.reset_index()[list(SUMMARY_COLUMNS)]

    def deterministic_rows(self) -> pd.DataFrame:
        """Rows without the timing columns, identical across reruns of the same config"""
        return self.rows.drop(columns=list(TIMING_COLUMNS))

    def to_csv(self, path: Path | None = None) -> str:
        text = self.rows.to_csv(index=False, float_format="%.10g")
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_markdown(self, path: Path | None = None) -> str:
        text = (
            "## Test AUC per phase\n\n"
            + markdown_table(self.rows)
            + "\n## Summary\n\n"
            + markdown_table(self.summary())
        )
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


@dataclass
class _StrategyState:
    model: GlmixModel
    priors: GlmixPriors
    failure: str | None = None
    rows: list[dict] = field(default_factory=list)


def _components(config: BenchmarkConfig, cold: bool) -> tuple[str, ...]:
    if cold or config.update_fixed_incrementally:
        return (FIXED_COMPONENT, *config.entity_types)
    return config.entity_types


def _trainer_for(strategy: Strategy, config: BenchmarkConfig) -> TrainerConfig:
    mode = strategy.hessian_mode
    if mode is None:
        return config.trainer
    return config.trainer.model_copy(update={"hessian_mode": mode})


def _store_config(config: BenchmarkConfig, trainer: TrainerConfig) -> ScheduleConfig:
    return ScheduleConfig(
        cold_window=config.cold_window,
        entity_types=config.entity_types,
        sweeps=config.sweeps,
        update_fixed_incrementally=config.update_fixed_incrementally,
        trainer=trainer,
    )


def _cold_start(
    data: PhaseDataset, config: BenchmarkConfig, trainer: TrainerConfig
) -> BcdResult:
    model = GlmixModel.zeros(data.feature_dim, config.entity_types, trainer.l2_base)
    schedule = BcdSchedule(components=_components(config, cold=True), sweeps=config.sweeps)
    return block_coordinate_descent(data, model, schedule, trainer)


def _cold_window(stream: Sequence[PhaseDataset], t: int, config: BenchmarkConfig):
    first = 0 if config.cold_window is None else max(0, t + 1 - config.cold_window)
    return PhaseDataset.concat(stream[first : t + 1])


def _train_phase(
    strategy: Strategy,
    state: _StrategyState,
    stream: Sequence[PhaseDataset],
    t: int,
    config: BenchmarkConfig,
    trainer: TrainerConfig,
) -> tuple[BcdResult, float]:
    """One round of a strategy, returning the result and its data loading time"""
    started = time.perf_counter()
    if strategy is Strategy.COLD:
        data = _cold_window(stream, t, config)
        load_seconds = time.perf_counter() - started
        return _cold_start(data, config, trainer), load_seconds

    components = _components(config, cold=False)
    kind = TrainModeKind.WARM if strategy is Strategy.WARM else TrainModeKind.INCREMENTAL
    schedule = BcdSchedule(
        components=components, sweeps=config.sweeps if len(components) > 1 else 1
    )
    modes = {component: kind for component in components}
    load_seconds = time.perf_counter() - started
    result = block_coordinate_descent(
        stream[t], state.model, schedule, trainer, modes, state.priors
    )
    return result, load_seconds


def _run_strategy(
    strategy: Strategy,
    stream: Sequence[PhaseDataset],
    config: BenchmarkConfig,
    shared: BcdResult,
    store: Path | None,
) -> list[dict]:
    trainer = _trainer_for(strategy, config)
    state = _StrategyState(shared.model, shared.priors)
    strategy_store = Path(store) / strategy.value if store is not None else None
    if strategy_store is not None:
        store_config = _store_config(config, trainer)
        save_round(strategy_store, 0, 0, shared.model, shared.priors, store_config)

    logger.info("Running strategy %s", strategy.value)
    for t in range(1, len(stream) - 1):
        row = {"phase": t + 1, "strategy": strategy.value, "test_auc": np.nan}
        row.update(dict.fromkeys(TIMING_COLUMNS, 0.0))
        if state.failure is not None:
            state.rows.append({**row, "failed": True})
            continue

        try:
            load_seconds = 0.0
            if strategy_store is not None:
                started = time.perf_counter()
                stored = load_round(round_dir(strategy_store, t - 1))
                state.model, state.priors = stored.model, stored.priors
                load_seconds = time.perf_counter() - started

            result, data_seconds = _train_phase(strategy, state, stream, t, config, trainer)
            state.model, state.priors = result.model, result.priors

            save_seconds = 0.0
            if strategy_store is not None:
                started = time.perf_counter()
                save_round(strategy_store, t, 0, result.model, result.priors, store_config)
                save_seconds = time.perf_counter() - started

            row.update(
                test_auc=model_auc(result.model, stream[t + 1]),
                fit_seconds=result.timing.fit_seconds,
                load_seconds=load_seconds + data_seconds,
                save_seconds=save_seconds,
                failed=False,
            )
            logger.info("%s phase %d: AUC %.4f", strategy.value, t + 1, row["test_auc"])
        except GlmixError as error:
            logger.warning("Strategy %s failed at phase %d: %s", strategy.value, t, error)
            state.failure = str(error)
            row["failed"] = True
        state.rows.append(row)
    return state.rows


def _check_stream(stream: Sequence[PhaseDataset]):
    if len(stream) < 3:
        raise DataValidationError(f"a benchmark needs at least 3 phases, got {len(stream)}")
    indices = [d.phase_index for d in stream]
    if indices != list(range(len(stream))):
        raise DataValidationError(f"phases must be contiguous from 0, got {indices}")


def run_benchmark(
    stream: Sequence[PhaseDataset],
    config: BenchmarkConfig = BenchmarkConfig(),
    store: Path | None = None,
    cold_starts: dict[HessianMode, BcdResult] | None = None,
) -> BenchmarkReport:
    """Compare strategies phase by phase

    Parameters
    ----------
    stream : Sequence[PhaseDataset]
        Phases contiguous from 0, at least 3 of them
    config : BenchmarkConfig
        Strategies, cold window, entity types and training settings
    store : Path | None
        When given, every strategy saves and reloads its rounds under its own
        subdirectory, and the load/save timings include the store round trip
    cold_starts : dict[HessianMode, BcdResult] | None
        Cache of the shared phase-0 cold start per Hessian mode, filled as needed

    Returns
    -------
    BenchmarkReport
        One row per strategy and evaluation phase 2 .. n - 1. A strategy whose training
        fails has this and its later rows marked failed; the others carry on

    Raises
    ------
    DataValidationError
        If the stream is shorter than 3 phases or not contiguous from 0
    """
    stream = list(stream)
    _check_stream(stream)
    cold_starts = {} if cold_starts is None else cold_starts

    rows = []
    for strategy in config.strategies:
        trainer = _trainer_for(strategy, config)
        if trainer.hessian_mode not in cold_starts:
            logger.info("Shared cold start on phase 0 (%s)", trainer.hessian_mode.value)
            cold_starts[trainer.hessian_mode] = _cold_start(stream[0], config, trainer)
        rows.extend(
            _run_strategy(strategy, stream, config, cold_starts[trainer.hessian_mode], store)
        )

    frame = pd.DataFrame(rows, columns=list(REPORT_COLUMNS))
    frame["failed"] = frame["failed"].astype(bool)
    return BenchmarkReport(frame)


@dataclass(frozen=True, eq=False)
class ForgettingFactorSearch:
    """Outcome of the forgetting factor grid search

    Attributes
    ----------
    strategy : Strategy
        The incremental strategy tuned
    best : float
        Forgetting factor with the highest mean held-out AUC
    mean_auc : dict[float, float]
        Mean AUC of every grid value
    reports : dict[float, BenchmarkReport]
        Full report of every grid value
    """

    strategy: Strategy
    best: float
    mean_auc: dict[float, float]
    reports: dict[float, BenchmarkReport]


def tune_forgetting_factor(
    stream: Sequence[PhaseDataset],
    strategy: Strategy = Strategy.INCRE_DIAG,
    grid: Sequence[float] | None = None,
    config: BenchmarkConfig = BenchmarkConfig(),
) -> ForgettingFactorSearch:
    """Grid search of lambda_f by mean next-phase AUC, ties going to the larger value

    Raises
    ------
    DataValidationError
        If the strategy is not incremental or the grid is empty or negative
    """
    if strategy.hessian_mode is None:
        raise DataValidationError(f"{strategy.value} has no forgetting factor to tune")
    grid = tuple(config.forgetting_grid if grid is None else grid)
    if not grid or min(grid) < 0:
        raise DataValidationError(f"forgetting factor grid must be non-empty and >= 0: {grid}")

    cold_starts = {}
    reports, mean_auc = {}, {}
    for lambda_f in sorted(set(grid)):
        lambda_f_max = max(config.trainer.lambda_f_max, lambda_f)
        trainer = config.trainer.model_copy(
            update={"lambda_f": lambda_f, "lambda_f_max": lambda_f_max}
        )
        run_config = config.model_copy(update={"strategies": (strategy,), "trainer": trainer})
        reports[lambda_f] = run_benchmark(stream, run_config, cold_starts=cold_starts)
        mean_auc[lambda_f] = reports[lambda_f].mean_auc(strategy)
        logger.info("lambda_f=%s: mean AUC %.4f", lambda_f, mean_auc[lambda_f])

    scored = [(auc, lambda_f) for lambda_f, auc in mean_auc.items() if not math.isnan(auc)]
    if not scored:
        raise DataValidationError("every forgetting factor of the grid failed")
    best = max(scored)[1]
    return ForgettingFactorSearch(strategy, best, mean_auc, reports)
