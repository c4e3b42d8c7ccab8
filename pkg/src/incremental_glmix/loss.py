from collections.abc import Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import expit

from incremental_glmix.constants import FULL_HESSIAN_BUDGET, HessianMode
from incremental_glmix.core.models import PhaseDataset
from incremental_glmix.core.scoring import linear_predictor
from incremental_glmix.core.sparse import SparseVector, as_dense
from incremental_glmix.errors import DataValidationError, ShapeError
from incremental_glmix.hessian import (
    DiagonalHessian,
    FullHessian,
    HessianRepr,
    PriorDistribution,
    hvp,
    logistic_hessian_diag,
    logistic_hessian_full,
)


Weights = SparseVector | np.ndarray


@dataclass(frozen=True)
class ObjectiveEvaluation:
    """Value and gradient of a minimized objective

    Attributes
    ----------
    value : float
        Objective value
    gradient : np.ndarray
        Dense gradient with respect to the weights
    """

    value: float
    gradient: np.ndarray

    def __add__(self, other: "ObjectiveEvaluation") -> "ObjectiveEvaluation":
        if self.gradient.shape != other.gradient.shape:
            raise ShapeError(
                f"gradients of shapes {self.gradient.shape} and {other.gradient.shape}"
            )
        return ObjectiveEvaluation(self.value + other.value, self.gradient + other.gradient)

    def scaled(self, factor: float) -> "ObjectiveEvaluation":
        return ObjectiveEvaluation(factor * self.value, factor * self.gradient)


@dataclass(frozen=True, eq=False)
class QuadraticLossSpec:
    """Quadratic loss 1/2 w^T A w - b^T w with a positive semi-definite A

    Attributes
    ----------
    matrix : FullHessian | DiagonalHessian
        A
    linear : np.ndarray
        b
    """

    matrix: FullHessian | DiagonalHessian
    linear: np.ndarray

    def __post_init__(self):
        linear = as_dense(self.linear, self.matrix.dim)
        linear.flags.writeable = False
        object.__setattr__(self, "linear", linear)

    @property
    def dim(self) -> int:
        return self.matrix.dim

    def dense_matrix(self) -> np.ndarray:
        if isinstance(self.matrix, DiagonalHessian):
            return np.diag(self.matrix.values)
        return np.array(self.matrix.matrix)

    def __add__(self, other: "QuadraticLossSpec") -> "QuadraticLossSpec":
        if self.dim != other.dim:
            raise ShapeError(f"quadratic losses of dims {self.dim} and {other.dim}")
        if isinstance(self.matrix, DiagonalHessian) and isinstance(other.matrix, DiagonalHessian):
            matrix = DiagonalHessian(self.matrix.values + other.matrix.values)
        else:
            matrix = FullHessian(self.dense_matrix() + other.dense_matrix())
        return QuadraticLossSpec(matrix, self.linear + other.linear)


def logistic_nll(w: Weights, data: PhaseDataset) -> ObjectiveEvaluation:
    """Negative log-likelihood of the logistic model, summed over examples

    Parameters
    ----------
    w : SparseVector | np.ndarray
        Weights
    data : PhaseDataset
        Labeled examples, their offsets enter the logits

    Returns
    -------
    ObjectiveEvaluation
        Summed loss and its gradient sum_i (sigma(z_i) - y_i) x_i

    Raises
    ------
    ShapeError
        If the weight dimension differs from the dataset dimension
    DataValidationError
        If a label is not binary
    """
    w = as_dense(w, data.feature_dim)
    if not len(data):
        return ObjectiveEvaluation(0.0, np.zeros(data.feature_dim))

    y = data.labels
    if not np.all((y == 0) | (y == 1)):
        raise DataValidationError("labels must be 0 or 1")

    z = linear_predictor(w, data)
    value = float(np.sum(y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)))
    gradient = data.design_matrix.T @ (expit(z) - y)
    return ObjectiveEvaluation(value, np.asarray(gradient, dtype=np.float64).ravel())


def prior_penalty(w: Weights, prior: PriorDistribution, lambda_f: float) -> ObjectiveEvaluation:
    """Forgetting-factor weighted Gaussian prior, lambda_f/2 (w - w0)^T H (w - w0)

    Raises
    ------
    ShapeError
        If the weight dimension differs from the prior dimension
    DataValidationError
        If lambda_f is negative
    """
    w = as_dense(w, prior.dim)
    if lambda_f < 0:
        raise DataValidationError(f"lambda_f must be non-negative, got {lambda_f}")
    if lambda_f == 0:
        return ObjectiveEvaluation(0.0, np.zeros(prior.dim))

    delta = w - prior.mean
    curvature = hvp(prior.precision, delta)
    return ObjectiveEvaluation(0.5 * lambda_f * float(delta @ curvature), lambda_f * curvature)


def incremental_objective(
    w: Weights, data: PhaseDataset, prior: PriorDistribution, lambda_f: float
) -> ObjectiveEvaluation:
    """Negative log-posterior of the sequential Bayesian update with forgetting factor"""
    return logistic_nll(w, data) + prior_penalty(w, prior, lambda_f)


def quadratic_oracle_loss(w: Weights, spec: QuadraticLossSpec) -> ObjectiveEvaluation:
    """Exactness oracle 1/2 w^T A w - b^T w with gradient A w - b"""
    w = as_dense(w, spec.dim)
    aw = hvp(spec.matrix, w)
    return ObjectiveEvaluation(0.5 * float(w @ aw) - float(spec.linear @ w), aw - spec.linear)


class DataLoss(Protocol):
    """Loss of one round's data, as seen by the trainer"""

    @property
    def dim(self) -> int: ...

    @property
    def n_examples(self) -> int: ...

    def __len__(self) -> int: ...

    def evaluate(self, w: np.ndarray) -> ObjectiveEvaluation: ...

    def hessian(self, w: np.ndarray, mode: HessianMode, budget: int) -> HessianRepr: ...

    def batch(self, positions: np.ndarray) -> "DataLoss": ...


@dataclass(frozen=True, eq=False)
class LogisticDataLoss:
    data: PhaseDataset

    @property
    def dim(self) -> int:
        return self.data.feature_dim

    @property
    def n_examples(self) -> int:
        return len(self.data)

    def __len__(self) -> int:
        return self.n_examples

    def evaluate(self, w: np.ndarray) -> ObjectiveEvaluation:
        return logistic_nll(w, self.data)

    def hessian(
        self, w: np.ndarray, mode: HessianMode, budget: int = FULL_HESSIAN_BUDGET
    ) -> HessianRepr:
        if mode is HessianMode.FULL:
            return logistic_hessian_full(w, self.data, budget)
        return logistic_hessian_diag(w, self.data)

    def batch(self, positions: np.ndarray) -> "LogisticDataLoss":
        return LogisticDataLoss(self.data.subset(positions))


@dataclass(frozen=True, eq=False)
class QuadraticDataLoss:
    """Quadratic oracle standing in for a round's data, it has one pseudo-example"""

    spec: QuadraticLossSpec

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n_examples(self) -> int:
        return 1

    def __len__(self) -> int:
        return 1

    def evaluate(self, w: np.ndarray) -> ObjectiveEvaluation:
        return quadratic_oracle_loss(w, self.spec)

    def hessian(
        self, w: np.ndarray, mode: HessianMode, budget: int = FULL_HESSIAN_BUDGET
    ) -> HessianRepr:
        if mode is HessianMode.FULL:
            return FullHessian(self.spec.dense_matrix())
        return DiagonalHessian(np.diag(self.spec.dense_matrix()).copy())

    def batch(self, positions: np.ndarray) -> "QuadraticDataLoss":
        return self


TrainingData = PhaseDataset | QuadraticLossSpec


def as_data_loss(data: TrainingData | Sequence[TrainingData]) -> DataLoss:
    """Wrap one dataset, one quadratic spec, or a window of either, as a DataLoss"""
    if isinstance(data, PhaseDataset):
        return LogisticDataLoss(data)
    if isinstance(data, QuadraticLossSpec):
        return QuadraticDataLoss(data)

    window = list(data)
    if not window:
        raise DataValidationError("a training window needs at least one phase")
    if all(isinstance(d, PhaseDataset) for d in window):
        return LogisticDataLoss(PhaseDataset.concat(window))
    if all(isinstance(d, QuadraticLossSpec) for d in window):
        total = window[0]
        for spec in window[1:]:
            total = total + spec
        return QuadraticDataLoss(total)
    raise DataValidationError("a training window cannot mix datasets and quadratic specs")


def minibatch_objective(
    w: Weights,
    batch: DataLoss,
    prior: PriorDistribution,
    lambda_f: float,
    n_examples: int,
) -> ObjectiveEvaluation:
    """Per-example average of the incremental objective estimated on a mini-batch

    The data term is averaged over the batch and the prior penalty is divided by the
    number of examples of the round, so the full-batch value is the summed objective
    divided by ``n_examples``.
    """
    data_term = batch.evaluate(as_dense(w, batch.dim)).scaled(1.0 / max(batch.n_examples, 1))
    return data_term + prior_penalty(w, prior, lambda_f).scaled(1.0 / n_examples)
