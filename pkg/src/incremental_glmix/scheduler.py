import logging
import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field, replace
from pathlib import Path

from incremental_glmix.constants import FIXED_COMPONENT, RoundBranch, TrainModeKind
from incremental_glmix.core.models import GlmixModel, PhaseDataset
from incremental_glmix.errors import GlmixError, PreconditionError, ShapeError, UndefinedMetricError
from incremental_glmix.evaluation.metrics import model_auc
from incremental_glmix.persistence.store import load_round, save_round
from incremental_glmix.schemas import BcdSchedule, ScheduleConfig
from incremental_glmix.trainer import GlmixPriors, TrainingTimings, block_coordinate_descent


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StreamState:
    """State carried from one round to the next

    Attributes
    ----------
    t : int
        Index of the next phase to consume
    counter : int
        Rounds since the last cold start, modulo the cold period
    current : GlmixModel | None
        Latest model, None before the first successful round
    priors : GlmixPriors | None
        Posteriors of the latest model's components
    history_buffer : tuple[PhaseDataset, ...]
        Last phases, at most the cold window long
    """

    t: int = 0
    counter: int = 0
    current: GlmixModel | None = None
    priors: GlmixPriors | None = None
    history_buffer: tuple[PhaseDataset, ...] = ()


@dataclass(frozen=True)
class RoundReport:
    """What happened in one round

    Attributes
    ----------
    t : int
        Phase index of the round
    branch : RoundBranch
        Cold or incremental
    counter_before : int
        Counter when the round started
    counter_after : int
        Counter handed to the next round
    n_examples : int
        Examples the round trained on
    timings : TrainingTimings
        Load, fit and save seconds
    objective : float | None
        Penalized objective after the last sweep, None on failure
    entity_failures : int
        Entities whose training failed without failing the round
    failure : str | None
        Error that failed the round, None on success
    test_auc : float | None
        AUC of the round's model on the next phase, None for the last round, a failed
        round or a next phase with a single class
    error : GlmixError | None
        The exception behind ``failure``
    """

    t: int
    branch: RoundBranch
    counter_before: int
    counter_after: int
    n_examples: int
    timings: TrainingTimings
    objective: float | None = None
    entity_failures: int = 0
    failure: str | None = None
    test_auc: float | None = None
    error: GlmixError | None = field(default=None, repr=False, compare=False)

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def as_row(self) -> dict:
        return {
            "phase": self.t,
            "branch": self.branch.value,
            "counter_before": self.counter_before,
            "counter_after": self.counter_after,
            "n_examples": self.n_examples,
            "objective": self.objective,
            "load_seconds": self.timings.load_seconds,
            "fit_seconds": self.timings.fit_seconds,
            "save_seconds": self.timings.save_seconds,
            "entity_failures": self.entity_failures,
            "failure": self.failure,
            "test_auc": self.test_auc,
        }


def _incremental_components(config: ScheduleConfig) -> tuple[str, ...]:
    if config.update_fixed_incrementally:
        return (FIXED_COMPONENT, *config.entity_types)
    return config.entity_types


def _train_round(
    state: StreamState,
    d_t: PhaseDataset,
    buffer: tuple[PhaseDataset, ...],
    config: ScheduleConfig,
):
    """Cold BCD on the window or incremental BCD on the newest phase"""
    started = time.perf_counter()
    if state.counter == 0:
        data = PhaseDataset.concat(buffer)
        components = (FIXED_COMPONENT, *config.entity_types)
        model = GlmixModel.zeros(d_t.feature_dim, config.entity_types, config.trainer.l2_base)
        schedule = BcdSchedule(components=components, sweeps=config.sweeps)
        modes, priors = {}, None
    else:
        if state.current is None or state.priors is None:
            raise PreconditionError("an incremental round needs a previous model and priors")
        data, model, priors = d_t, state.current, state.priors
        components = _incremental_components(config)
        sweeps = config.sweeps if len(components) > 1 else 1
        schedule = BcdSchedule(components=components, sweeps=sweeps)
        modes = {component: TrainModeKind.INCREMENTAL for component in components}
    load_seconds = time.perf_counter() - started

    result = block_coordinate_descent(data, model, schedule, config.trainer, modes, priors)
    return data, result, load_seconds


def step(
    state: StreamState,
    d_t: PhaseDataset,
    config: ScheduleConfig,
    store: Path | None = None,
) -> tuple[StreamState, RoundReport]:
    """Run one round of the stream

    Parameters
    ----------
    state : StreamState
        State before the round
    d_t : PhaseDataset
        The phase of the round, its index must equal ``state.t``
    config : ScheduleConfig
        Cold period and window, entity types, lambda_f and Hessian mode
    store : Path | None
        Model store root; when given the round is saved under it

    Returns
    -------
    tuple[StreamState, RoundReport]
        The next state and the round's report. A failed round keeps the model, priors
        and buffer of ``state``, and resets the counter when the failure policy says so.

    Raises
    ------
    PreconditionError
        If the phase index does not match the state
    """
    if d_t.phase_index != state.t:
        raise PreconditionError(f"expected phase {state.t}, got phase {d_t.phase_index}")

    branch = RoundBranch.COLD if state.counter == 0 else RoundBranch.INCREMENTAL
    buffer = (*state.history_buffer, d_t)[-config.window :]
    logger.info("Round %d: %s (counter %d)", state.t, branch.value, state.counter)

    try:
        data, result, load_seconds = _train_round(state, d_t, buffer, config)
        next_counter = (state.counter + 1) % config.cold_period
        next_state = StreamState(
            t=state.t + 1,
            counter=next_counter,
            current=result.model,
            priors=result.priors,
            history_buffer=buffer,
        )
        save_seconds = 0.0
        if store is not None:
            started = time.perf_counter()
            save_round(store, state.t, next_counter, result.model, result.priors, config)
            save_seconds = time.perf_counter() - started
    except GlmixError as error:
        logger.warning("Round %d failed: %s", state.t, error)
        if config.reset_counter_on_failure:
            next_counter = 0
            logger.warning("Counter reset, round %d will be cold", state.t + 1)
        else:
            next_counter = (state.counter + 1) % config.cold_period
        report = RoundReport(
            t=state.t,
            branch=branch,
            counter_before=state.counter,
            counter_after=next_counter,
            n_examples=0,
            timings=TrainingTimings(),
            failure=str(error),
            error=error,
        )
        return replace(state, t=state.t + 1, counter=next_counter), report

    timings = TrainingTimings(load_seconds, result.timing.fit_seconds, save_seconds)
    logger.info(
        "Round %d done: fit %.3fs, save %.3fs", state.t, timings.fit_seconds, save_seconds
    )
    report = RoundReport(
        t=state.t,
        branch=branch,
        counter_before=state.counter,
        counter_after=next_counter,
        n_examples=len(data),
        timings=timings,
        objective=result.sweep_objectives[-1] if result.sweep_objectives else None,
        entity_failures=len(result.failures),
    )
    return next_state, report


def _with_test_auc(report: RoundReport, model: GlmixModel | None, d_next: PhaseDataset):
    if report.failed or model is None:
        return report
    try:
        return replace(report, test_auc=model_auc(model, d_next))
    except (ShapeError, UndefinedMetricError) as error:
        logger.warning("No test AUC for round %d: %s", report.t, error)
        return report


def run_stream(
    stream: Iterable[PhaseDataset],
    config: ScheduleConfig,
    sink: Callable[[RoundReport], None] | None = None,
    store: Path | None = None,
    state: StreamState | None = None,
) -> StreamState:
    """Fold ``step`` over a stream of phases, emitting one report per round

    A round's report reaches ``sink`` once the next phase has arrived, with the AUC of the
    round's model on that phase. The last report is emitted without one.
    """
    state = state or StreamState()
    pending = None
    for d_t in stream:
        if pending is not None and sink is not None:
            sink(_with_test_auc(*pending, d_t))
        state, report = step(state, d_t, config, store)
        pending = report, state.current
    if pending is not None and sink is not None:
        sink(pending[0])
    return state


def restore_state(round_dir: Path, history_buffer: Iterable[PhaseDataset]) -> StreamState:
    """Rebuild the state saved after a round, the phases of the buffer are read again

    Parameters
    ----------
    round_dir : Path
        Directory of the saved round
    history_buffer : Iterable[PhaseDataset]
        The phases of the saved buffer, oldest first

    Returns
    -------
    StreamState
        State ready for the phase after the saved round
    """
    stored = load_round(round_dir)
    buffer = tuple(history_buffer)[-stored.meta.window :]
    if buffer and buffer[-1].phase_index != stored.meta.t:
        raise PreconditionError(
            f"buffer ends at phase {buffer[-1].phase_index}, the store at {stored.meta.t}"
        )
    return StreamState(
        t=stored.meta.t + 1,
        counter=stored.meta.counter,
        current=stored.model,
        priors=stored.priors,
        history_buffer=buffer,
    )
