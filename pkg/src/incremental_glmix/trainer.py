import logging
import time
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from incremental_glmix.constants import FIXED_COMPONENT, HessianMode, StopReason, TrainModeKind
from incremental_glmix.core.models import GlmixModel, GlmModel, PhaseDataset
from incremental_glmix.core.scoring import (
    fixed_effect_scores,
    glmix_scores,
    random_effect_scores,
)
from incremental_glmix.errors import (
    DataValidationError,
    GlmixError,
    PreconditionError,
    ShapeError,
    VariantMismatchError,
)
from incremental_glmix.hessian import (
    AdamMomentHessian,
    DfpHessian,
    DiagonalHessian,
    FullHessian,
    HessianRepr,
    PriorDistribution,
    accumulate_precision,
    cold_start_prior,
    dfp_record,
    scale_precision,
)
from incremental_glmix.loss import (
    DataLoss,
    TrainingData,
    as_data_loss,
    logistic_nll,
    minibatch_objective,
    prior_penalty,
)
from incremental_glmix.optimizer import OptimizationResult, adam_minimize, lbfgs_minimize
from incremental_glmix.schemas import BcdSchedule, TrainerConfig


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Cold:
    """Train from zero under the lambda_0 prior, on the window or on the given data"""

    window: tuple[TrainingData, ...] = ()

    @property
    def kind(self) -> TrainModeKind:
        return TrainModeKind.COLD


@dataclass(frozen=True, eq=False)
class Warm:
    """Train on the newest data only, starting from the previous weights"""

    prev: GlmModel

    @property
    def kind(self) -> TrainModeKind:
        return TrainModeKind.WARM


@dataclass(frozen=True, eq=False)
class Incremental:
    """Train on the newest data under the previous posterior weighted by lambda_f

    Attributes
    ----------
    prior : PriorDistribution
        Mean and precision left by the previous round
    lambda_f : float
        Forgetting factor, non-negative
    hessian_mode : HessianMode
        Representation of the precision handed to the next round
    """

    prior: PriorDistribution
    lambda_f: float
    hessian_mode: HessianMode

    def __post_init__(self):
        if self.lambda_f < 0:
            raise DataValidationError(f"lambda_f must be non-negative, got {self.lambda_f}")

    @property
    def kind(self) -> TrainModeKind:
        return TrainModeKind.INCREMENTAL


TrainMode = Cold | Warm | Incremental


@dataclass(frozen=True)
class TrainingTimings:
    """Wall-clock seconds spent loading inputs, fitting and saving results"""

    load_seconds: float = 0.0
    fit_seconds: float = 0.0
    save_seconds: float = 0.0

    def __post_init__(self):
        if min(self.load_seconds, self.fit_seconds, self.save_seconds) < 0:
            raise DataValidationError("timings must be non-negative")

    def __add__(self, other: "TrainingTimings") -> "TrainingTimings":
        return TrainingTimings(
            self.load_seconds + other.load_seconds,
            self.fit_seconds + other.fit_seconds,
            self.save_seconds + other.save_seconds,
        )

    @property
    def total_seconds(self) -> float:
        return self.load_seconds + self.fit_seconds + self.save_seconds


@dataclass(frozen=True, eq=False)
class TrainedComponent:
    """A trained GLM and the prior it leaves for the next round

    Attributes
    ----------
    model : GlmModel
        The trained component
    next_prior : PriorDistribution
        Posterior centered on the model weights
    timing : TrainingTimings
        Time spent on the component
    warnings : tuple[str, ...]
        Non-fatal conditions met while training
    result : OptimizationResult | None
        The minimizer run, None when no optimization took place
    """

    model: GlmModel
    next_prior: PriorDistribution
    timing: TrainingTimings = TrainingTimings()
    warnings: tuple[str, ...] = ()
    result: OptimizationResult | None = None


def _as_full(precision: HessianRepr) -> FullHessian:
    match precision:
        case FullHessian():
            return precision
        case DiagonalHessian(values=values):
            return FullHessian(np.diag(values))
        case AdamMomentHessian(v_hat=v_hat, scale=scale):
            return FullHessian(np.diag(scale * v_hat))
    raise VariantMismatchError(f"cannot use a {type(precision).__name__} as a full prior")


def _as_diagonal(precision: HessianRepr) -> DiagonalHessian:
    match precision:
        case DiagonalHessian():
            return precision
        case FullHessian(matrix=matrix):
            return DiagonalHessian(np.clip(np.diag(matrix), 0.0, None))
        case AdamMomentHessian(v_hat=v_hat, scale=scale):
            return DiagonalHessian(scale * v_hat)
    raise VariantMismatchError(f"cannot use a {type(precision).__name__} as a diagonal prior")


def _adam_objective(data_loss: DataLoss, prior: PriorDistribution, lambda_f: float):
    n_examples = data_loss.n_examples

    def objective(w: np.ndarray, positions: np.ndarray):
        return minibatch_objective(w, data_loss.batch(positions), prior, lambda_f, n_examples)

    return objective


def _second_moment_at(
    w: np.ndarray,
    data_loss: DataLoss,
    prior: PriorDistribution,
    lambda_f: float,
    config: TrainerConfig,
) -> np.ndarray:
    """Adam's second moment after one epoch at fixed weights"""
    adam = config.optimizer.adam.model_copy(update={"learning_rate": 0.0, "epochs": 1})
    optimizer = config.optimizer.model_copy(update={"adam": adam})
    _, v_hat = adam_minimize(_adam_objective(data_loss, prior, lambda_f), w, data_loss, optimizer)
    return v_hat


def build_next_precision(
    data_loss: DataLoss,
    w_star: np.ndarray,
    prior: PriorDistribution,
    lambda_f: float,
    hessian_mode: HessianMode,
    config: TrainerConfig,
    result: OptimizationResult | None = None,
    v_hat: np.ndarray | None = None,
) -> tuple[HessianRepr, tuple[str, ...]]:
    """Precision of the posterior left by one round

    Full and diagonal precisions chain as lambda_f * H_prior + H_data(w_star). A DFP
    memory is recorded from the last steps of the run, falling back to lambda_0 * I when no
    step has positive curvature. An Adam precision is N * v_hat; when the round was not
    trained by Adam, v_hat is taken over one epoch at ``w_star``.

    Returns
    -------
    tuple[HessianRepr, tuple[str, ...]]
        The precision and the warnings raised while building it
    """
    match hessian_mode:
        case HessianMode.FULL:
            data_h = data_loss.hessian(w_star, HessianMode.FULL, config.full_hessian_budget)
            return accumulate_precision(_as_full(prior.precision), data_h, lambda_f), ()
        case HessianMode.DIAG:
            data_h = data_loss.hessian(w_star, HessianMode.DIAG, config.full_hessian_budget)
            return accumulate_precision(_as_diagonal(prior.precision), data_h, lambda_f), ()
        case HessianMode.DFP:
            trajectory = result.trajectory if result is not None else ()
            try:
                memory = dfp_record(
                    trajectory, config.optimizer.dfp_memory, config.curvature_eps
                )
            except PreconditionError as error:
                logger.warning("DFP memory unavailable (%s), using the lambda_0 diagonal", error)
                fallback = DiagonalHessian(np.full(data_loss.dim, config.l2_base))
                return fallback, (f"DFP fallback: {error}",)
            return DfpHessian(memory), ()
        case HessianMode.ADAM:
            if v_hat is None:
                v_hat = _second_moment_at(w_star, data_loss, prior, lambda_f, config)
            return AdamMomentHessian(v_hat, data_loss.n_examples), ()
    raise TypeError(f"unknown Hessian mode {hessian_mode}")


def train_glm(
    data: TrainingData,
    mode: TrainMode,
    config: TrainerConfig = TrainerConfig(),
    w0: np.ndarray | None = None,
) -> TrainedComponent:
    """Train one GLM component under a cold, warm or incremental mode

    Parameters
    ----------
    data : PhaseDataset | QuadraticLossSpec
        The round's data; a cold mode with a window trains on the window instead
    mode : Cold | Warm | Incremental
        How the component is trained
    config : TrainerConfig
        lambda_0, Hessian mode of cold and warm rounds, budgets and minimizer settings
    w0 : np.ndarray | None
        Starting point overriding the mode's own (zero, previous weights or prior mean);
        the objective is unchanged

    Returns
    -------
    TrainedComponent
        The model and the prior for the next round

    Raises
    ------
    DataValidationError
        If a cold window has no example, or lambda_f exceeds its configured bound
    ShapeError
        If the data, previous model, prior or ``w0`` dimensions differ
    """
    match mode:
        case Cold(window=window):
            data_loss = as_data_loss(window or data)
            if not data_loss.n_examples:
                raise DataValidationError("cold start needs at least one example")
            prior = cold_start_prior(data_loss.dim, config.l2_base)
            lambda_f, hessian_mode = 1.0, config.hessian_mode
            start = np.zeros(data_loss.dim)
        case Warm(prev=prev):
            data_loss = as_data_loss(data)
            if prev.dim != data_loss.dim:
                raise ShapeError(
                    f"previous model of dim {prev.dim} for data of dim {data_loss.dim}"
                )
            prior = cold_start_prior(data_loss.dim, config.l2_base)
            lambda_f, hessian_mode = 1.0, config.hessian_mode
            start = prev.dense_weights()
        case Incremental(prior=prior, lambda_f=lambda_f, hessian_mode=hessian_mode):
            if lambda_f > config.lambda_f_max:
                raise DataValidationError(
                    f"lambda_f={lambda_f} exceeds lambda_f_max={config.lambda_f_max}"
                )
            data_loss = as_data_loss(data)
            if prior.dim != data_loss.dim:
                raise ShapeError(f"prior of dim {prior.dim} for data of dim {data_loss.dim}")
            start = np.array(prior.mean)
            if not data_loss.n_examples:
                return _carry_forward(prior, lambda_f, config, "no examples, prior carried forward")
        case _:
            raise TypeError(f"unknown train mode {mode!r}")

    if w0 is not None:
        start = np.array(w0, dtype=np.float64)
        if start.shape != (data_loss.dim,):
            raise ShapeError(f"starting point of shape {start.shape}, expected ({data_loss.dim},)")

    started = time.perf_counter()
    v_hat = None
    if mode.kind is TrainModeKind.INCREMENTAL and hessian_mode is HessianMode.ADAM:
        objective = _adam_objective(data_loss, prior, lambda_f)
        result, v_hat = adam_minimize(objective, start, data_loss, config.optimizer)
    else:

        def objective(w: np.ndarray):
            return data_loss.evaluate(w) + prior_penalty(w, prior, lambda_f)

        result = lbfgs_minimize(objective, start, config.optimizer)

    warnings = ()
    if not result.converged and result.stop_reason is not StopReason.EPOCHS:
        warnings += (f"not converged: {result.stop_reason.value}",)
    precision, precision_warnings = build_next_precision(
        data_loss, result.w_star, prior, lambda_f, hessian_mode, config, result, v_hat
    )
    fit_seconds = time.perf_counter() - started

    return TrainedComponent(
        model=GlmModel.from_dense(result.w_star, config.l2_base),
        next_prior=PriorDistribution(result.w_star, precision),
        timing=TrainingTimings(fit_seconds=fit_seconds),
        warnings=warnings + precision_warnings,
        result=result,
    )


def _carry_forward(
    prior: PriorDistribution, lambda_f: float, config: TrainerConfig, reason: str
) -> TrainedComponent:
    """Prior mean kept as the model, precision decayed by lambda_f"""
    logger.warning("Incremental round without data: %s", reason)
    return TrainedComponent(
        model=GlmModel.from_dense(prior.mean, config.l2_base),
        next_prior=PriorDistribution(prior.mean, scale_precision(prior.precision, lambda_f)),
        warnings=(reason,),
    )


@dataclass(frozen=True, eq=False)
class RandomEffectsResult:
    """Per-entity components of one entity type, plus the entities that failed"""

    components: Mapping[str, TrainedComponent]
    failures: Mapping[str, str] = field(default_factory=dict)

    @property
    def models(self) -> dict[str, GlmModel]:
        return {entity_id: c.model for entity_id, c in self.components.items()}

    @property
    def priors(self) -> dict[str, PriorDistribution]:
        return {entity_id: c.next_prior for entity_id, c in self.components.items()}


def _entity_mode(
    entity_id: str,
    kind: TrainModeKind,
    dim: int,
    priors: Mapping[str, PriorDistribution],
    start: Mapping[str, GlmModel],
    config: TrainerConfig,
) -> TrainMode:
    match kind:
        case TrainModeKind.COLD:
            return Cold()
        case TrainModeKind.WARM:
            return Warm(start.get(entity_id) or GlmModel.zeros(dim, config.l2_base))
        case TrainModeKind.INCREMENTAL:
            prior = priors.get(entity_id)
            if prior is None:
                return Incremental(cold_start_prior(dim, config.l2_base), 1.0, config.hessian_mode)
            return Incremental(prior, config.lambda_f, config.hessian_mode)
    raise TypeError(f"unknown train mode {kind}")


def _kept_component(
    entity_id: str,
    priors: Mapping[str, PriorDistribution],
    start: Mapping[str, GlmModel],
    config: TrainerConfig,
    reason: str,
) -> TrainedComponent | None:
    """Previous state of an entity that is not retrained, None when it has none"""
    if entity_id in start:
        model = start[entity_id]
        prior = priors.get(entity_id)
        if prior is None or not np.array_equal(prior.mean, model.dense_weights()):
            precision = DiagonalHessian(np.full(model.dim, config.l2_base))
            prior = PriorDistribution(model.dense_weights(), precision)
        return TrainedComponent(model, prior, warnings=(reason,))
    if entity_id in priors:
        prior = priors[entity_id]
        model = GlmModel.from_dense(prior.mean, config.l2_base)
        return TrainedComponent(model, prior, warnings=(reason,))
    return None


def train_random_effects(
    data: PhaseDataset,
    entity_type: str,
    offsets: np.ndarray | None,
    priors: Mapping[str, PriorDistribution],
    mode: TrainModeKind,
    config: TrainerConfig = TrainerConfig(),
    start: Mapping[str, GlmModel] | None = None,
) -> RandomEffectsResult:
    """Train one GLM per entity of a type on the entity's residuals

    Parameters
    ----------
    data : PhaseDataset
        The round's examples
    entity_type : str
        Entity type whose ids partition the examples
    offsets : np.ndarray | None
        Per-example scores of every other component, None keeps the dataset offsets
    priors : Mapping[str, PriorDistribution]
        Previous posterior of each entity, used by incremental rounds
    mode : TrainModeKind
        Cold, warm or incremental. Incremental entities without a prior are cold started
        under the zero-mean lambda_0 prior
    config : TrainerConfig
        Per-entity training settings; ``n_workers`` > 1 trains entities on threads
    start : Mapping[str, GlmModel] | None
        Current entity models, the warm starting points and the starting points of
        later block coordinate descent sweeps

    Returns
    -------
    RandomEffectsResult
        Components sorted by entity id. Entities absent from the data are carried
        forward by warm and incremental rounds, with their precision decayed by lambda_f
        in incremental ones. A failed entity keeps its previous state and is reported.
    """
    start = start or {}
    shifted = data if offsets is None else data.with_offsets(offsets)
    partition = shifted.partition_by_entity(entity_type)

    def train(entity_id: str) -> tuple[str, TrainedComponent | GlmixError]:
        try:
            mode_of_entity = _entity_mode(
                entity_id, mode, data.feature_dim, priors, start, config
            )
            w0 = start[entity_id].dense_weights() if entity_id in start else None
            subset = shifted.subset(partition[entity_id])
            return entity_id, train_glm(subset, mode_of_entity, config, w0)
        except GlmixError as error:
            return entity_id, error

    if config.n_workers > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as executor:
            outcomes = list(executor.map(train, partition))
    else:
        outcomes = [train(entity_id) for entity_id in partition]

    components, failures = {}, {}
    for entity_id, outcome in outcomes:
        if isinstance(outcome, GlmixError):
            logger.warning("Training %s:%s failed: %s", entity_type, entity_id, outcome)
            failures[entity_id] = str(outcome)
            kept = _kept_component(entity_id, priors, start, config, f"failed: {outcome}")
            if kept is not None:
                components[entity_id] = kept
        else:
            components[entity_id] = outcome

    if mode is not TrainModeKind.COLD:
        for entity_id in sorted((set(priors) | set(start)) - set(partition)):
            if mode is TrainModeKind.INCREMENTAL and entity_id in priors:
                components[entity_id] = _carry_forward(
                    priors[entity_id], config.lambda_f, config, "entity absent from the data"
                )
            else:
                kept = _kept_component(entity_id, priors, start, config, "entity absent")
                if kept is not None:
                    components[entity_id] = kept

    return RandomEffectsResult(
        components=MappingProxyType({k: components[k] for k in sorted(components)}),
        failures=MappingProxyType(dict(sorted(failures.items()))),
    )


@dataclass(frozen=True, eq=False)
class GlmixPriors:
    """Priors of every component of a GLMix model

    Attributes
    ----------
    fixed : PriorDistribution
        Prior of the fixed effect
    random_effects : Mapping[str, Mapping[str, PriorDistribution]]
        Entity type mapped to the per-entity priors
    """

    fixed: PriorDistribution
    random_effects: Mapping[str, Mapping[str, PriorDistribution]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self,
            "random_effects",
            MappingProxyType(
                {
                    entity_type: MappingProxyType(dict(sorted(priors.items())))
                    for entity_type, priors in sorted(self.random_effects.items())
                }
            ),
        )


@dataclass(frozen=True, eq=False)
class BcdResult:
    """Outcome of block coordinate descent

    Attributes
    ----------
    model : GlmixModel
        The trained model
    priors : GlmixPriors
        Priors for the next round; components left out of the schedule keep theirs
    sweep_objectives : tuple[float, ...]
        Penalized GLMix objective after each sweep
    failures : Mapping[str, str]
        "entity_type:entity_id" of failed entities mapped to the error
    timing : TrainingTimings
        Wall-clock fit time of the whole descent
    """

    model: GlmixModel
    priors: GlmixPriors
    sweep_objectives: tuple[float, ...]
    failures: Mapping[str, str]
    timing: TrainingTimings


def _component_scores(model: GlmixModel, component: str, data: PhaseDataset) -> np.ndarray:
    if component == FIXED_COMPONENT:
        return fixed_effect_scores(model, data)
    return random_effect_scores(model, component, data)


def _penalty(
    weights: np.ndarray, kind: TrainModeKind, prior: PriorDistribution | None, config: TrainerConfig
) -> float:
    if kind is TrainModeKind.INCREMENTAL and prior is not None:
        return prior_penalty(weights, prior, config.lambda_f).value
    return prior_penalty(weights, cold_start_prior(weights.size, config.l2_base), 1.0).value


def glmix_objective(
    model: GlmixModel,
    data: PhaseDataset,
    components: tuple[str, ...],
    modes: Mapping[str, TrainModeKind],
    priors: GlmixPriors | None,
    config: TrainerConfig,
) -> float:
    """Logistic loss of the summed logits plus the penalties of the trained components"""
    logits = glmix_scores(model, data)
    value = logistic_nll(np.zeros(data.feature_dim), data.with_offsets(data.offsets + logits)).value
    for component in components:
        kind = modes.get(component, TrainModeKind.COLD)
        if component == FIXED_COMPONENT:
            prior = priors.fixed if priors is not None else None
            value += _penalty(model.fixed.dense_weights(), kind, prior, config)
            continue
        entity_priors = priors.random_effects.get(component, {}) if priors is not None else {}
        for entity_id, entity_model in model.random_effects.get(component, {}).items():
            value += _penalty(
                entity_model.dense_weights(), kind, entity_priors.get(entity_id), config
            )
    return value


def _fixed_mode(
    kind: TrainModeKind, model: GlmixModel, priors: GlmixPriors | None, config: TrainerConfig
) -> TrainMode:
    match kind:
        case TrainModeKind.COLD:
            return Cold()
        case TrainModeKind.WARM:
            return Warm(model.fixed)
        case TrainModeKind.INCREMENTAL:
            if priors is None:
                raise PreconditionError("an incremental fixed effect needs a prior")
            return Incremental(priors.fixed, config.lambda_f, config.hessian_mode)
    raise TypeError(f"unknown train mode {kind}")


def block_coordinate_descent(
    data: PhaseDataset,
    model: GlmixModel,
    schedule: BcdSchedule = BcdSchedule(),
    config: TrainerConfig = TrainerConfig(),
    modes: Mapping[str, TrainModeKind] | None = None,
    priors: GlmixPriors | None = None,
) -> BcdResult:
    """Retrain the scheduled components in turn, each on the residuals of the others

    Parameters
    ----------
    data : PhaseDataset
        The round's examples; their own offsets are kept under every component's
    model : GlmixModel
        Current model, the source of the offsets of components not retrained
    schedule : BcdSchedule
        Components in training order and number of sweeps
    config : TrainerConfig
        Per-component training settings
    modes : Mapping[str, TrainModeKind] | None
        Train mode per component, cold when missing
    priors : GlmixPriors | None
        Previous posteriors, required by incremental components

    Returns
    -------
    BcdResult
        The model, the next priors and the objective after every sweep
    """
    modes = modes or {}
    started = time.perf_counter()
    current = model
    next_fixed = priors.fixed if priors is not None else None
    next_random = {
        entity_type: dict(entity_priors)
        for entity_type, entity_priors in (priors.random_effects if priors else {}).items()
    }
    failures = {}
    objectives = []

    for sweep in range(schedule.sweeps):
        for component in schedule.components:
            kind = modes.get(component, TrainModeKind.COLD)
            others = glmix_scores(current, data) - _component_scores(current, component, data)
            offsets = data.offsets + others

            if component == FIXED_COMPONENT:
                trained = train_glm(
                    data.with_offsets(offsets),
                    _fixed_mode(kind, current, priors, config),
                    config,
                    current.fixed.dense_weights() if sweep > 0 else None,
                )
                current = current.with_fixed(trained.model)
                next_fixed = trained.next_prior
                continue

            entity_priors = priors.random_effects.get(component, {}) if priors else {}
            restart = sweep > 0 or kind is TrainModeKind.WARM
            result = train_random_effects(
                data,
                component,
                offsets,
                entity_priors,
                kind,
                config,
                start=current.random_effects.get(component, {}) if restart else None,
            )
            current = current.with_random_effects(component, result.models)
            next_random[component] = result.priors
            failures.update({f"{component}:{k}": v for k, v in result.failures.items()})

        objectives.append(
            glmix_objective(current, data, schedule.components, modes, priors, config)
        )
        logger.debug("BCD sweep %d: objective=%.12g", sweep + 1, objectives[-1])

    if next_fixed is None:
        precision = DiagonalHessian(np.full(current.dim, config.l2_base))
        next_fixed = PriorDistribution(current.fixed.dense_weights(), precision)

    return BcdResult(
        model=current,
        priors=GlmixPriors(next_fixed, next_random),
        sweep_objectives=tuple(objectives),
        failures=MappingProxyType(failures),
        timing=TrainingTimings(fit_seconds=time.perf_counter() - started),
    )
