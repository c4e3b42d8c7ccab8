from pydantic import BaseModel, ConfigDict, Field, model_validator

from incremental_glmix.constants import (
    CURVATURE_EPS,
    DEFAULT_COLD_PERIOD,
    DEFAULT_DFP_MEMORY,
    DEFAULT_FORGETTING_GRID,
    FIXED_COMPONENT,
    FULL_HESSIAN_BUDGET,
    MAX_DFP_MEMORY,
    HessianMode,
    Strategy,
)


class FrozenModel(BaseModel):
    """Base for configuration models, immutable once validated"""

    model_config = ConfigDict(frozen=True, extra="forbid")


class LineSearchConfig(FrozenModel):
    """Pydantic model for the Armijo backtracking line search

    Attributes
    ----------
    c1 : float
        Sufficient decrease constant, in (0, 1)
    shrink : float
        Step multiplier applied after a rejected trial, in (0, 1)
    max_trials : int
        Number of trial steps before the line search gives up
    """

    c1: float = Field(1e-4, gt=0, lt=1)
    shrink: float = Field(0.5, gt=0, lt=1)
    max_trials: int = Field(40, ge=1)


class AdamConfig(FrozenModel):
    """Pydantic model for the mini-batch Adam minimizer

    Attributes
    ----------
    learning_rate : float
        Step size, zero leaves the weights untouched
    beta1 : float
        First moment decay, in [0, 1)
    beta2 : float
        Second moment decay, in (0, 1)
    epsilon : float
        Denominator guard
    batch_size : int
        Examples per mini-batch
    epochs : int
        Passes over the data
    shuffle_seed : int
        Seed of the per-epoch permutation
    """

    learning_rate: float = Field(0.005, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    batch_size: int = Field(1, ge=1)
    epochs: int = Field(30, ge=1)
    shuffle_seed: int = Field(0, ge=0)


class OptimizerConfig(FrozenModel):
    """Pydantic model shared by the L-BFGS and Adam minimizers

    Attributes
    ----------
    max_iterations : int
        Iteration cap of L-BFGS
    gradient_tolerance : float
        Converged when the gradient norm falls below this times max(1, initial norm)
    objective_tolerance : float
        Stop when the relative decrease over the last 3 iterations falls below this,
        zero disables the test
    lbfgs_memory : int
        Curvature pairs kept by L-BFGS
    dfp_memory : int
        DFP memory size m; the result trajectory keeps the last m + 1 iterates
    line_search : LineSearchConfig
        Armijo parameters
    adam : AdamConfig
        Mini-batch Adam parameters
    """

    max_iterations: int = Field(100, ge=0)
    gradient_tolerance: float = Field(1e-6, gt=0, lt=1)
    objective_tolerance: float = Field(1e-10, ge=0, lt=1)
    lbfgs_memory: int = Field(10, ge=1)
    dfp_memory: int = Field(DEFAULT_DFP_MEMORY, ge=1, le=MAX_DFP_MEMORY)
    line_search: LineSearchConfig = LineSearchConfig()
    adam: AdamConfig = AdamConfig()


class TrainerConfig(FrozenModel):
    """Pydantic model for training one component

    Attributes
    ----------
    l2_base : float
        Cold-start prior precision lambda_0
    lambda_f : float
        Forgetting factor applied to the prior penalty
    lambda_f_max : float
        Configurable upper bound of lambda_f
    hessian_mode : HessianMode
        Representation of the precision handed to the next round
    full_hessian_budget : int
        Largest feature dimension for which a full Hessian is built
    curvature_eps : float
        Curvature filter of DFP pairs
    n_workers : int
        Threads used to train random-effect entities, 1 runs them inline
    optimizer : OptimizerConfig
        Minimizer settings
    """

    l2_base: float = Field(1.0, ge=0)
    lambda_f: float = Field(1.0, ge=0)
    lambda_f_max: float = Field(1.0, gt=0)
    hessian_mode: HessianMode = HessianMode.DIAG
    full_hessian_budget: int = Field(FULL_HESSIAN_BUDGET, ge=1)
    curvature_eps: float = Field(CURVATURE_EPS, gt=0)
    n_workers: int = Field(1, ge=1)
    optimizer: OptimizerConfig = OptimizerConfig()

    @model_validator(mode="after")
    def check_forgetting_factor(self) -> "TrainerConfig":
        """Keep lambda_f inside [0, lambda_f_max]"""
        if self.lambda_f > self.lambda_f_max:
            raise ValueError(
                f"lambda_f={self.lambda_f} exceeds lambda_f_max={self.lambda_f_max}"
            )
        return self


class BcdSchedule(FrozenModel):
    """Pydantic model for the block coordinate descent order

    Attributes
    ----------
    components : tuple[str, ...]
        Components retrained in order, "fixed" or an entity type name
    sweeps : int
        Outer iterations over the components
    """

    components: tuple[str, ...] = (FIXED_COMPONENT,)
    sweeps: int = Field(2, ge=1)


class ScheduleConfig(FrozenModel):
    """Pydantic model for the periodic cold start scheduler

    Attributes
    ----------
    cold_period : int
        T, rounds per cycle (one cold round followed by T - 1 incremental rounds)
    cold_window : int | None
        l, phases used by a cold round; defaults to the cold period
    reset_counter_on_failure : bool
        Force the next round to be cold after a failed round
    entity_types : tuple[str, ...]
        Random-effect types of the GLMix model
    sweeps : int
        Block coordinate descent sweeps of a cold round
    update_fixed_incrementally : bool
        Also update the fixed effect in incremental rounds
    trainer : TrainerConfig
        Per-component training settings, including lambda_f and the Hessian mode
    """

    cold_period: int = Field(DEFAULT_COLD_PERIOD, ge=1)
    cold_window: int | None = Field(None, ge=1)
    reset_counter_on_failure: bool = True
    entity_types: tuple[str, ...] = ("member",)
    sweeps: int = Field(2, ge=1)
    update_fixed_incrementally: bool = False
    trainer: TrainerConfig = TrainerConfig()

    @property
    def window(self) -> int:
        """Effective cold-start window length"""
        return self.cold_window if self.cold_window is not None else self.cold_period

    @property
    def lambda_f(self) -> float:
        """Forgetting factor of incremental rounds"""
        return self.trainer.lambda_f

    @property
    def hessian_mode(self) -> HessianMode:
        """Precision representation chained between rounds"""
        return self.trainer.hessian_mode


class DriftGenConfig(FrozenModel):
    """Pydantic model for the synthetic drifting stream

    Attributes
    ----------
    seed : int
        Seed of every random draw
    n_entities : int
        Number of entities of the random-effect type
    feature_dim : int
        Feature dimension, index 0 is a constant bias feature
    examples_per_phase : int
        Examples drawn per phase
    n_phases : int
        Phases in the stream
    drift_rate : float
        Standard deviation of the per-phase random walk of entity weights
    entity_activity_skew : float
        Zipf exponent of entity activity, 0 gives uniform activity
    nnz_per_example : int
        Non-bias features active per example
    fixed_weight_scale : float
        Standard deviation of the population weights
    entity_weight_scale : float
        Standard deviation of the initial entity deviations
    entity_type : str
        Name of the random-effect type
    """

    seed: int = Field(0, ge=0)
    n_entities: int = Field(200, ge=1)
    feature_dim: int = Field(50, ge=2)
    examples_per_phase: int = Field(6000, ge=1)
    n_phases: int = Field(5, ge=1)
    drift_rate: float = Field(0.05, ge=0)
    entity_activity_skew: float = Field(1.0, ge=0)
    nnz_per_example: int = Field(8, ge=1)
    fixed_weight_scale: float = Field(0.5, gt=0)
    entity_weight_scale: float = Field(1.0, gt=0)
    entity_type: str = Field("member", min_length=1)

    @model_validator(mode="after")
    def check_sparsity(self) -> "DriftGenConfig":
        """Active features must fit in the non-bias part of the feature space"""
        if self.nnz_per_example > self.feature_dim - 1:
            raise ValueError("nnz_per_example must be smaller than feature_dim")
        return self


class BenchmarkConfig(FrozenModel):
    """Pydantic model for the Cold/Warm/Incre comparison

    Attributes
    ----------
    strategies : tuple[Strategy, ...]
        Strategies to run, all sharing the cold model of the first phase
    cold_window : int | None
        Phases used by the Cold strategy, None trains on the whole history
    entity_types : tuple[str, ...]
        Random-effect types of the GLMix model
    sweeps : int
        Block coordinate descent sweeps of cold trainings
    update_fixed_incrementally : bool
        Also update the fixed effect in warm and incremental rounds
    forgetting_grid : tuple[float, ...]
        Candidates of the forgetting factor search
    trainer : TrainerConfig
        Per-component training settings; its lambda_f drives the incremental strategies
    """

    strategies: tuple[Strategy, ...] = tuple(Strategy)
    cold_window: int | None = Field(None, ge=1)
    entity_types: tuple[str, ...] = ("member",)
    sweeps: int = Field(2, ge=1)
    update_fixed_incrementally: bool = False
    forgetting_grid: tuple[float, ...] = DEFAULT_FORGETTING_GRID
    trainer: TrainerConfig = TrainerConfig()

    @model_validator(mode="after")
    def check_strategies(self) -> "BenchmarkConfig":
        """At least one strategy, each at most once"""
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("strategies must be unique")
        return self
