from typing import Annotated, Literal

import numpy as np
from pydantic import Field

from incremental_glmix.constants import STORE_FORMAT_VERSION, HessianMode
from incremental_glmix.core.models import GlmModel
from incremental_glmix.core.sparse import SparseVector
from incremental_glmix.hessian import (
    AdamMomentHessian,
    DfpHessian,
    DfpMemory,
    DfpPair,
    DiagonalHessian,
    FullHessian,
    HessianRepr,
    PriorDistribution,
)
from incremental_glmix.schemas import FrozenModel


class FullPrecisionRecord(FrozenModel):
    """Pydantic model for a full precision, stored row-major"""

    kind: Literal["full"] = "full"
    dim: int = Field(ge=0)
    matrix: list[float]


class DiagonalPrecisionRecord(FrozenModel):
    kind: Literal["diag"] = "diag"
    values: list[float]


class DfpPairRecord(FrozenModel):
    step: list[float]
    gradient_change: list[float]
    rho: float


class DfpPrecisionRecord(FrozenModel):
    kind: Literal["dfp"] = "dfp"
    memory_size: int = Field(ge=1)
    pairs: list[DfpPairRecord]


class AdamPrecisionRecord(FrozenModel):
    kind: Literal["adam"] = "adam"
    v_hat: list[float]
    scale: float


PrecisionRecord = Annotated[
    FullPrecisionRecord | DiagonalPrecisionRecord | DfpPrecisionRecord | AdamPrecisionRecord,
    Field(discriminator="kind"),
]


def precision_to_record(precision: HessianRepr) -> PrecisionRecord:
    match precision:
        case FullHessian(matrix=matrix):
            return FullPrecisionRecord(dim=precision.dim, matrix=matrix.ravel().tolist())
        case DiagonalHessian(values=values):
            return DiagonalPrecisionRecord(values=values.tolist())
        case DfpHessian(memory=memory):
            return DfpPrecisionRecord(
                memory_size=memory.memory_size,
                pairs=[
                    DfpPairRecord(
                        step=p.step.tolist(),
                        gradient_change=p.gradient_change.tolist(),
                        rho=p.rho,
                    )
                    for p in memory.pairs
                ],
            )
        case AdamMomentHessian(v_hat=v_hat, scale=scale):
            return AdamPrecisionRecord(v_hat=v_hat.tolist(), scale=scale)
    raise TypeError(f"unknown precision {type(precision).__name__}")


def precision_from_record(record: PrecisionRecord) -> HessianRepr:
    match record:
        case FullPrecisionRecord(dim=dim, matrix=matrix):
            return FullHessian(np.array(matrix, dtype=np.float64).reshape(dim, dim))
        case DiagonalPrecisionRecord(values=values):
            return DiagonalHessian(np.array(values, dtype=np.float64))
        case DfpPrecisionRecord(memory_size=memory_size, pairs=pairs):
            return DfpHessian(
                DfpMemory(
                    tuple(DfpPair(p.step, p.gradient_change, p.rho) for p in pairs),
                    memory_size,
                )
            )
        case AdamPrecisionRecord(v_hat=v_hat, scale=scale):
            return AdamMomentHessian(np.array(v_hat, dtype=np.float64), scale)
    raise TypeError(f"unknown precision record {type(record).__name__}")


class ComponentRecord(FrozenModel):
    """Pydantic model for one stored component: its weights and its next prior

    Attributes
    ----------
    entity_id : str | None
        Entity id of a random-effect component, None for the fixed effect
    dim : int
        Feature dimension
    l2_base : float
        Cold-start prior precision of the model
    weight_indices : list[int]
        Non-zero weight indices, increasing
    weight_values : list[float]
        Non-zero weight values
    prior_mean : list[float]
        Dense mean of the next prior
    precision : PrecisionRecord
        Precision of the next prior, tagged by ``kind``
    """

    entity_id: str | None = None
    dim: int = Field(ge=0)
    l2_base: float = Field(ge=0)
    weight_indices: list[int]
    weight_values: list[float]
    prior_mean: list[float]
    precision: PrecisionRecord

    @classmethod
    def from_component(
        cls, model: GlmModel, prior: PriorDistribution, entity_id: str | None = None
    ) -> "ComponentRecord":
        return cls(
            entity_id=entity_id,
            dim=model.dim,
            l2_base=model.l2_base,
            weight_indices=model.weights.indices.tolist(),
            weight_values=model.weights.values.tolist(),
            prior_mean=prior.mean.tolist(),
            precision=precision_to_record(prior.precision),
        )

    def to_component(self) -> tuple[GlmModel, PriorDistribution]:
        weights = SparseVector(
            indices=np.array(self.weight_indices, dtype=np.int64),
            values=np.array(self.weight_values, dtype=np.float64),
            dim=self.dim,
        )
        prior = PriorDistribution(
            np.array(self.prior_mean, dtype=np.float64), precision_from_record(self.precision)
        )
        return GlmModel(weights, self.l2_base), prior


class RoundMeta(FrozenModel):
    """Pydantic model for the meta file of a stored round

    Attributes
    ----------
    format_version : int
        Store layout version, checked before anything else is read
    t : int
        Phase index of the round
    counter : int
        Scheduler counter after the round
    lambda_f : float
        Forgetting factor in use
    hessian_mode : HessianMode
        Precision representation in use
    window : int
        Cold-start window length
    dim : int
        Feature dimension
    entity_types : tuple[str, ...]
        Random-effect types, one records file each
    record_counts : dict[str, int]
        Records per records file
    checksums : dict[str, str]
        sha256 of every records file
    """

    format_version: int = STORE_FORMAT_VERSION
    t: int = Field(ge=0)
    counter: int = Field(ge=0)
    lambda_f: float = Field(ge=0)
    hessian_mode: HessianMode
    window: int = Field(ge=1)
    dim: int = Field(ge=0)
    entity_types: tuple[str, ...] = ()
    record_counts: dict[str, int] = {}
    checksums: dict[str, str] = {}
