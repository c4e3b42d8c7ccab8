import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType

import numpy as np
import pandas as pd
from scipy import sparse

from incremental_glmix.core.sparse import SparseVector
from incremental_glmix.errors import DataValidationError, ShapeError


@dataclass(frozen=True)
class LabeledExample:
    """One labeled example

    Attributes
    ----------
    features : SparseVector
        Feature vector shared by the fixed and random-effect components
    label : int
        Binary label, 0 or 1
    entity_ids : Mapping[str, str]
        Entity id per entity type, e.g. {"member": "m1"}
    offset : float
        Fixed logit contribution of the components not being trained
    """

    features: SparseVector
    label: int
    entity_ids: Mapping[str, str] = field(default_factory=dict)
    offset: float = 0.0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataValidationError(f"label must be 0 or 1, got {self.label!r}")
        if not math.isfinite(self.offset):
            raise DataValidationError(f"offset must be finite, got {self.offset}")
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "entity_ids", MappingProxyType(dict(self.entity_ids)))

    __hash__ = None


@dataclass(frozen=True)
class PhaseDataset:
    """One time slice of the stream

    Attributes
    ----------
    phase_index : int
        Position t of the slice in the stream
    examples : tuple[LabeledExample, ...]
        Labeled examples of the slice
    feature_dim : int
        Feature dimension shared by every example
    """

    phase_index: int
    examples: tuple[LabeledExample, ...]
    feature_dim: int

    def __post_init__(self):
        if self.phase_index < 0:
            raise DataValidationError(f"phase_index must be non-negative, got {self.phase_index}")
        object.__setattr__(self, "examples", tuple(self.examples))
        for position, example in enumerate(self.examples):
            if example.features.dim != self.feature_dim:
                raise ShapeError(
                    f"example {position} has dim {example.features.dim}, "
                    f"dataset has {self.feature_dim}"
                )

    __hash__ = None

    def __len__(self) -> int:
        return len(self.examples)

    @classmethod
    def empty(cls, phase_index: int, feature_dim: int) -> "PhaseDataset":
        return cls(phase_index=phase_index, examples=(), feature_dim=feature_dim)

    @classmethod
    def concat(cls, datasets: Sequence["PhaseDataset"], phase_index: int | None = None):
        """Join several phases into one dataset, e.g. a cold-start window

        Parameters
        ----------
        datasets : Sequence[PhaseDataset]
            Phases to join, all with the same feature dimension
        phase_index : int | None
            Index of the result, defaults to the index of the last phase

        Returns
        -------
        PhaseDataset
            A dataset holding every example in order
        """
        if not datasets:
            raise DataValidationError("cannot concatenate an empty list of phases")
        dims = {d.feature_dim for d in datasets}
        if len(dims) != 1:
            raise ShapeError(f"phases have different feature dims {sorted(dims)}")

        return cls(
            phase_index=datasets[-1].phase_index if phase_index is None else phase_index,
            examples=tuple(e for d in datasets for e in d.examples),
            feature_dim=dims.pop(),
        )

    @cached_property
    def design_matrix(self) -> sparse.csr_matrix:
        """CSR matrix of the features, one row per example"""
        counts = [e.features.nnz for e in self.examples]
        indptr = np.concatenate([[0], np.cumsum(counts, dtype=np.int64)])
        if self.examples:
            indices = np.concatenate([e.features.indices for e in self.examples])
            data = np.concatenate([e.features.values for e in self.examples])
        else:
            indices, data = np.empty(0, np.int64), np.empty(0)
        return sparse.csr_matrix(
            (data, indices, indptr), shape=(len(self.examples), self.feature_dim)
        )

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.float64)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([e.offset for e in self.examples], dtype=np.float64)

    def entity_ids(self, entity_type: str) -> list[str | None]:
        return [e.entity_ids.get(entity_type) for e in self.examples]

    def partition_by_entity(self, entity_type: str) -> dict[str, np.ndarray]:
        """Positions of the examples of each entity, examples without an id are skipped

        Returns
        -------
        dict[str, np.ndarray]
            Sorted entity ids mapped to increasing example positions
        """
        ids = pd.Series(self.entity_ids(entity_type), dtype="object").dropna()
        if ids.empty:
            return {}
        groups = ids.groupby(ids, sort=True).indices
        return {str(k): ids.index.to_numpy()[v] for k, v in groups.items()}

    def subset(self, positions: Iterable[int]) -> "PhaseDataset":
        positions = np.asarray(list(positions), dtype=np.int64)
        subset = PhaseDataset(
            phase_index=self.phase_index,
            examples=tuple(self.examples[p] for p in positions),
            feature_dim=self.feature_dim,
        )
        subset.__dict__["design_matrix"] = self.design_matrix[positions]
        return subset

    def with_offsets(self, offsets: np.ndarray) -> "PhaseDataset":
        """Same examples with their offsets replaced

        Raises
        ------
        ShapeError
            If the number of offsets differs from the number of examples
        """
        offsets = np.asarray(offsets, dtype=np.float64)
        if offsets.shape != (len(self),):
            raise ShapeError(f"{offsets.shape} offsets for {len(self)} examples")

        shifted = PhaseDataset(
            phase_index=self.phase_index,
            examples=tuple(
                LabeledExample(e.features, e.label, e.entity_ids, float(o))
                for e, o in zip(self.examples, offsets, strict=True)
            ),
            feature_dim=self.feature_dim,
        )
        shifted.__dict__["design_matrix"] = self.design_matrix
        return shifted


@dataclass(frozen=True)
class GlmModel:
    """Logistic-regression component

    Attributes
    ----------
    weights : SparseVector
        Coefficients, materialized densely inside the optimizers
    l2_base : float
        Cold-start prior precision lambda_0
    """

    weights: SparseVector
    l2_base: float = 1.0

    def __post_init__(self):
        if self.l2_base < 0:
            raise DataValidationError(f"l2_base must be non-negative, got {self.l2_base}")

    @classmethod
    def zeros(cls, dim: int, l2_base: float = 1.0) -> "GlmModel":
        return cls(weights=SparseVector.zeros(dim), l2_base=l2_base)

    @classmethod
    def from_dense(cls, weights: np.ndarray, l2_base: float = 1.0) -> "GlmModel":
        return cls(weights=SparseVector.from_dense(weights), l2_base=l2_base)

    @property
    def dim(self) -> int:
        return self.weights.dim

    def dense_weights(self) -> np.ndarray:
        return self.weights.to_dense()


@dataclass(frozen=True)
class GlmixModel:
    """Fixed effect plus per-entity random effects whose logits add up

    Attributes
    ----------
    fixed : GlmModel
        Population-level component
    random_effects : Mapping[str, Mapping[str, GlmModel]]
        Entity type mapped to the per-entity-id components
    """

    fixed: GlmModel
    random_effects: Mapping[str, Mapping[str, GlmModel]] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {}
        for entity_type in sorted(self.random_effects):
            models = self.random_effects[entity_type]
            for entity_id, model in models.items():
                if model.dim != self.fixed.dim:
                    raise ShapeError(
                        f"{entity_type}:{entity_id} has dim {model.dim}, "
                        f"fixed effect has {self.fixed.dim}"
                    )
            frozen[entity_type] = MappingProxyType({k: models[k] for k in sorted(models)})
        object.__setattr__(self, "random_effects", MappingProxyType(frozen))

    __hash__ = None

    @classmethod
    def zeros(cls, dim: int, entity_types: Iterable[str] = (), l2_base: float = 1.0):
        return cls(
            fixed=GlmModel.zeros(dim, l2_base),
            random_effects={entity_type: {} for entity_type in entity_types},
        )

    @property
    def dim(self) -> int:
        return self.fixed.dim

    @property
    def entity_types(self) -> tuple[str, ...]:
        return tuple(self.random_effects)

    def with_fixed(self, fixed: GlmModel) -> "GlmixModel":
        return GlmixModel(fixed=fixed, random_effects=self.random_effects)

    def with_random_effects(
        self, entity_type: str, models: Mapping[str, GlmModel]
    ) -> "GlmixModel":
        random_effects = dict(self.random_effects)
        random_effects[entity_type] = models
        return GlmixModel(fixed=self.fixed, random_effects=random_effects)
