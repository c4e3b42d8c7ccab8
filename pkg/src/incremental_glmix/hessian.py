import contextlib
import logging
from collections.abc import Iterator, Sequence
from contextvars import ContextVar
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from incremental_glmix.constants import (
    CURVATURE_EPS,
    DEFAULT_DFP_MEMORY,
    FULL_HESSIAN_BUDGET,
    MAX_DFP_MEMORY,
    HessianMode,
)
from incremental_glmix.core.models import PhaseDataset
from incremental_glmix.core.scoring import linear_predictor
from incremental_glmix.core.sparse import SparseVector, as_dense
from incremental_glmix.errors import (
    CapacityError,
    DataValidationError,
    EmptyMemoryError,
    PreconditionError,
    ShapeError,
    VariantMismatchError,
)


logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


class _ArrayValue:
    """Value equality over dataclass fields holding numpy arrays"""

    def __eq__(self, other: object) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        for f in fields(self):
            mine, theirs = getattr(self, f.name), getattr(other, f.name)
            if isinstance(mine, np.ndarray):
                if not np.array_equal(mine, theirs):
                    return False
            elif mine != theirs:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FullHessian(_ArrayValue):
    """Dense symmetric p x p precision"""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = _readonly(self.matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ShapeError(f"full Hessian must be square, got shape {matrix.shape}")
        scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=SYMMETRY_TOLERANCE * scale):
            raise DataValidationError("full Hessian must be symmetric")
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def mode(self) -> HessianMode:
        return HessianMode.FULL


@dataclass(frozen=True, eq=False)
class DiagonalHessian(_ArrayValue):
    """Non-negative diagonal precision"""

    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 1:
            raise ShapeError(f"diagonal Hessian must be a vector, got shape {values.shape}")
        if np.any(values < 0):
            raise DataValidationError("diagonal Hessian entries must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def mode(self) -> HessianMode:
        return HessianMode.DIAG


@dataclass(frozen=True, eq=False)
class DfpPair(_ArrayValue):
    """One optimizer step and the matching gradient change

    Attributes
    ----------
    step : np.ndarray
        Delta x_i = x_i - x_{i-1}
    gradient_change : np.ndarray
        Delta g_i = g(x_i) - g(x_{i-1})
    rho : float
        1 / (Delta x_i^T Delta g_i)
    """

    step: np.ndarray
    gradient_change: np.ndarray
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "step", _readonly(self.step))
        object.__setattr__(self, "gradient_change", _readonly(self.gradient_change))
        object.__setattr__(self, "rho", float(self.rho))
        if self.step.shape != self.gradient_change.shape or self.step.ndim != 1:
            raise ShapeError("step and gradient change must be vectors of the same length")

    @classmethod
    def from_step(cls, step: np.ndarray, gradient_change: np.ndarray) -> "DfpPair":
        return cls(step, gradient_change, 1.0 / float(step @ gradient_change))

    @property
    def curvature(self) -> float:
        return float(self.step @ self.gradient_change)


@dataclass(frozen=True, eq=False)
class DfpMemory(_ArrayValue):
    """Last m curvature pairs, ordered oldest to newest

    Attributes
    ----------
    pairs : tuple[DfpPair, ...]
        Between 1 and ``memory_size`` pairs, each with positive curvature
    memory_size : int
        m, at most 10
    """

    pairs: tuple[DfpPair, ...]
    memory_size: int = DEFAULT_DFP_MEMORY

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not 1 <= self.memory_size <= MAX_DFP_MEMORY:
            raise DataValidationError(f"memory size must lie in [1, {MAX_DFP_MEMORY}]")
        if not self.pairs:
            raise EmptyMemoryError("a DFP memory holds at least one pair")
        if len(self.pairs) > self.memory_size:
            raise DataValidationError(
                f"{len(self.pairs)} pairs exceed the memory size {self.memory_size}"
            )
        if len({p.step.size for p in self.pairs}) != 1:
            raise ShapeError("DFP pairs have different dimensions")
        for pair in self.pairs:
            if not pair.curvature > 0:
                raise DataValidationError("DFP pairs must have positive curvature")

    @property
    def dim(self) -> int:
        return self.pairs[0].step.size

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class DfpHessian(_ArrayValue):
    """Precision known only through DFP Hessian-vector products"""

    memory: DfpMemory

    @property
    def dim(self) -> int:
        return self.memory.dim

    @property
    def mode(self) -> HessianMode:
        return HessianMode.DFP


@dataclass(frozen=True, eq=False)
class AdamMomentHessian(_ArrayValue):
    """Diagonal precision scale * v_hat from Adam's second moment

    Attributes
    ----------
    v_hat : np.ndarray
        Bias-corrected second moment of the per-example average gradient
    scale : float
        Number of examples, converts the average into the summed loss scale
    """

    v_hat: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        v_hat = _readonly(self.v_hat)
        if v_hat.ndim != 1:
            raise ShapeError(f"second moment must be a vector, got shape {v_hat.shape}")
        if np.any(v_hat < 0) or self.scale < 0:
            raise DataValidationError("second moment and scale must be non-negative")
        object.__setattr__(self, "v_hat", v_hat)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dim(self) -> int:
        return self.v_hat.size

    @property
    def mode(self) -> HessianMode:
        return HessianMode.ADAM


HessianRepr = FullHessian | DiagonalHessian | DfpHessian | AdamMomentHessian


@dataclass(frozen=True, eq=False)
class PriorDistribution(_ArrayValue):
    """Gaussian posterior of the previous round

    Attributes
    ----------
    mean : np.ndarray
        w_{t-1}
    precision : HessianRepr
        H_{t-1}, the inverse posterior covariance
    """

    mean: np.ndarray
    precision: HessianRepr

    def __post_init__(self):
        mean = _readonly(as_dense(self.mean))
        if mean.size != self.precision.dim:
            raise ShapeError(
                f"prior mean of dim {mean.size} with precision of dim {self.precision.dim}"
            )
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.mean.size


def cold_start_prior(dim: int, l2_base: float) -> PriorDistribution:
    """Zero-mean prior with precision l2_base * I, the prior of every cold start"""
    return PriorDistribution(np.zeros(dim), DiagonalHessian(np.full(dim, float(l2_base))))


@dataclass
class HvpCounter:
    """Number of hvp calls and of matrix/vector entries they touched"""

    calls: int = 0
    entries: int = 0


_hvp_counter: ContextVar[HvpCounter | None] = ContextVar("hvp_counter", default=None)


@contextlib.contextmanager
def count_hvp_operations() -> Iterator[HvpCounter]:
    """Count the entries touched by every hvp call made inside the block"""
    counter = HvpCounter()
    token = _hvp_counter.set(counter)
    try:
        yield counter
    finally:
        _hvp_counter.reset(token)


def _record_cost(entries: int):
    counter = _hvp_counter.get()
    if counter is not None:
        counter.calls += 1
        counter.entries += entries


def _curvature_weights(w, data: PhaseDataset) -> np.ndarray:
    p = expit(linear_predictor(w, data))
    return p * (1.0 - p)


def logistic_hessian_full(
    w: SparseVector | np.ndarray, data: PhaseDataset, budget: int = FULL_HESSIAN_BUDGET
) -> FullHessian:
    """Exact Hessian sum_i p_i (1 - p_i) x_i x_i^T of the logistic loss

    Parameters
    ----------
    w : SparseVector | np.ndarray
        Weights at which the Hessian is evaluated
    data : PhaseDataset
        Examples of the loss, offsets included in the logits
    budget : int
        Largest feature dimension for which the p x p matrix is built

    Returns
    -------
    FullHessian
        The symmetric positive semi-definite Hessian

    Raises
    ------
    CapacityError
        If the feature dimension exceeds the budget
    """
    if data.feature_dim > budget:
        raise CapacityError(
            f"full Hessian of dim {data.feature_dim} exceeds the budget of {budget}"
        )
    if not len(data):
        return FullHessian(np.zeros((data.feature_dim, data.feature_dim)))
    weights = _curvature_weights(w, data)
    x = data.design_matrix
    matrix = (x.T @ x.multiply(weights[:, None])).toarray()
    return FullHessian((matrix + matrix.T) / 2.0)


def logistic_hessian_diag(w: SparseVector | np.ndarray, data: PhaseDataset) -> DiagonalHessian:
    """Diagonal sum_i p_i (1 - p_i) x_ij^2 of the logistic-loss Hessian"""
    if not len(data):
        return DiagonalHessian(np.zeros(data.feature_dim))
    weights = _curvature_weights(w, data)
    x = data.design_matrix
    return DiagonalHessian(np.asarray(x.multiply(x).T @ weights).ravel())


def accumulate_precision(
    prior: HessianRepr, data_h: HessianRepr, lambda_f: float
) -> HessianRepr:
    """Chain the precision across rounds, H_t = lambda_f * H_{t-1} + H(D_t)

    Only full and diagonal representations are accumulated; DFP memories carry the prior
    curvature through their gradient changes and Adam moments are rebuilt every round.

    Raises
    ------
    VariantMismatchError
        If the two representations are not both full or both diagonal
    ShapeError
        If the dimensions differ
    """
    if lambda_f < 0:
        raise DataValidationError(f"lambda_f must be non-negative, got {lambda_f}")
    if prior.dim != data_h.dim:
        raise ShapeError(f"precisions of dims {prior.dim} and {data_h.dim}")

    match prior, data_h:
        case FullHessian(), FullHessian():
            return FullHessian(lambda_f * prior.matrix + data_h.matrix)
        case DiagonalHessian(), DiagonalHessian():
            return DiagonalHessian(lambda_f * prior.values + data_h.values)
    raise VariantMismatchError(
        f"cannot accumulate {type(prior).__name__} with {type(data_h).__name__}"
    )


def scale_precision(precision: HessianRepr, factor: float) -> HessianRepr:
    """Precision multiplied by a non-negative factor

    A DFP memory is scaled through its gradient changes, which scales every product it
    returns; scaling it by zero leaves a zero diagonal.
    """
    if factor < 0:
        raise DataValidationError(f"precision scale must be non-negative, got {factor}")

    match precision:
        case FullHessian(matrix=matrix):
            return FullHessian(factor * matrix)
        case DiagonalHessian(values=values):
            return DiagonalHessian(factor * values)
        case AdamMomentHessian(v_hat=v_hat, scale=scale):
            return AdamMomentHessian(v_hat, factor * scale)
        case DfpHessian(memory=memory):
            if factor == 0:
                return DiagonalHessian(np.zeros(memory.dim))
            pairs = tuple(
                DfpPair(p.step, factor * p.gradient_change, p.rho / factor) for p in memory.pairs
            )
            return DfpHessian(DfpMemory(pairs, memory.memory_size))
    raise TypeError(f"unknown precision {type(precision).__name__}")


def dfp_record(
    trajectory: Sequence[tuple[np.ndarray, np.ndarray]],
    memory_size: int = DEFAULT_DFP_MEMORY,
    curvature_eps: float = CURVATURE_EPS,
) -> DfpMemory:
    """Build a DFP memory from the last steps of an optimization trajectory

    Parameters
    ----------
    trajectory : Sequence[tuple[np.ndarray, np.ndarray]]
        Iterates and gradients (x_k, g_k) in order, at least two of them
    memory_size : int
        m, number of pairs kept
    curvature_eps : float
        Pairs with Delta x^T Delta g at or below this value are skipped

    Returns
    -------
    DfpMemory
        The newest m pairs that pass the curvature filter

    Raises
    ------
    PreconditionError
        If the trajectory has fewer than two points
    EmptyMemoryError
        If no pair passes the curvature filter
    """
    if len(trajectory) < 2:
        raise PreconditionError("a DFP memory needs a trajectory of at least two points")

    pairs = []
    for (x_prev, g_prev), (x_next, g_next) in zip(trajectory, trajectory[1:]):
        step = as_dense(x_next) - as_dense(x_prev)
        gradient_change = as_dense(g_next) - as_dense(g_prev)
        if float(step @ gradient_change) > curvature_eps:
            pairs.append(DfpPair.from_step(step, gradient_change))

    if not pairs:
        raise EmptyMemoryError("no trajectory step has positive curvature")
    logger.debug("%d of %d steps pass the curvature filter", len(pairs), len(trajectory) - 1)
    return DfpMemory(tuple(pairs[-memory_size:]), memory_size)


def dfp_hvp(memory: DfpMemory, d: np.ndarray) -> np.ndarray:
    """DFP approximation of H d by the two-loop recursion with steps and gradients swapped

    Raises
    ------
    EmptyMemoryError
        If the memory holds no pair
    ShapeError
        If d does not match the memory dimension
    """
    if memory is None or not len(memory):
        raise EmptyMemoryError("DFP Hessian-vector product needs a non-empty memory")
    r = as_dense(d, memory.dim)

    alphas = []
    for pair in reversed(memory.pairs):
        alpha = pair.rho * float(pair.gradient_change @ r)
        r = r - alpha * pair.step
        alphas.append(alpha)

    newest = memory.pairs[-1]
    r = (newest.curvature / float(newest.step @ newest.step)) * r

    for pair, alpha in zip(memory.pairs, reversed(alphas), strict=True):
        beta = pair.rho * float(pair.step @ r)
        r = r + (alpha - beta) * pair.gradient_change
    return r


def adam_second_moment_update(
    v: np.ndarray, g: np.ndarray, beta2: float, step: int
) -> np.ndarray:
    """One update of Adam's raw second moment, v <- beta2 v + (1 - beta2) g^2

    Parameters
    ----------
    v : np.ndarray
        Raw (not bias-corrected) second moment
    g : np.ndarray
        Gradient of the current step
    beta2 : float
        Decay, in (0, 1)
    step : int
        1-based number of the step being applied

    Returns
    -------
    np.ndarray
        The updated raw moment; ``adam_bias_corrected`` gives v_hat
    """
    _check_adam_args(beta2, step)
    v, g = np.asarray(v, dtype=np.float64), np.asarray(g, dtype=np.float64)
    if v.shape != g.shape:
        raise ShapeError(f"second moment of shape {v.shape} with gradient of shape {g.shape}")
    return beta2 * v + (1.0 - beta2) * g * g


def adam_bias_corrected(v: np.ndarray, beta2: float, step: int) -> np.ndarray:
    """v_hat = v / (1 - beta2^step)"""
    _check_adam_args(beta2, step)
    return np.asarray(v, dtype=np.float64) / (1.0 - beta2**step)


def _check_adam_args(beta2: float, step: int):
    if not 0 < beta2 < 1:
        raise DataValidationError(f"beta2 must lie in (0, 1), got {beta2}")
    if step < 1:
        raise DataValidationError(f"step must be at least 1, got {step}")


def hvp(precision: HessianRepr, v: np.ndarray) -> np.ndarray:
    """Product of any precision representation with a vector

    Cost per call: O(p) for diagonal and Adam, O(m p) for DFP, O(p^2) for full.
    """
    v = as_dense(v, precision.dim)
    p = precision.dim

    match precision:
        case FullHessian(matrix=matrix):
            _record_cost(p * p)
            return matrix @ v
        case DiagonalHessian(values=values):
            _record_cost(p)
            return values * v
        case AdamMomentHessian(v_hat=v_hat, scale=scale):
            _record_cost(p)
            return scale * v_hat * v
        case DfpHessian(memory=memory):
            _record_cost((4 * len(memory) + 1) * p)
            return dfp_hvp(memory, v)
    raise TypeError(f"unknown precision {type(precision).__name__}")
