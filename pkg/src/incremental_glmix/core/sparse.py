from collections.abc import Iterable, Iterator
from dataclasses import dataclass

import numpy as np

from incremental_glmix.errors import DataValidationError, ShapeError


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Indexed real-valued vector in canonical form

    Attributes
    ----------
    indices : np.ndarray
        Strictly increasing int64 indices, all below ``dim``
    values : np.ndarray
        float64 values, none of them zero
    dim : int
        Length of the dense vector represented
    """

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        indices = np.array(self.indices, dtype=np.int64).reshape(-1)
        values = np.array(self.values, dtype=np.float64).reshape(-1)

        if self.dim < 0:
            raise DataValidationError(f"dim must be non-negative, got {self.dim}")
        if indices.shape != values.shape:
            raise ShapeError(f"{indices.size} indices for {values.size} values")
        if indices.size:
            if indices[0] < 0 or indices[-1] >= self.dim:
                raise DataValidationError(f"indices must lie in [0, {self.dim})")
            if np.any(np.diff(indices) <= 0):
                raise DataValidationError("indices must be strictly increasing")
        if np.any(values == 0.0):
            raise DataValidationError("canonical sparse vectors store no zeros")

        object.__setattr__(self, "indices", _frozen(indices))
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], dim: int) -> "SparseVector":
        """Build a canonical vector from unordered (index, value) pairs

        Parameters
        ----------
        pairs : Iterable[tuple[int, float]]
            Index/value pairs, zero values are dropped
        dim : int
            Dimension of the vector

        Returns
        -------
        SparseVector
            The canonical vector

        Raises
        ------
        DataValidationError
            If an index is repeated or out of range
        """
        pairs = sorted((int(i), float(v)) for i, v in pairs)
        indices = [i for i, _ in pairs]
        if len(set(indices)) != len(indices):
            raise DataValidationError("duplicate index in sparse vector")

        kept = [(i, v) for i, v in pairs if v != 0.0]
        return cls(
            indices=np.array([i for i, _ in kept], dtype=np.int64),
            values=np.array([v for _, v in kept], dtype=np.float64),
            dim=dim,
        )

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseVector":
        dense = np.asarray(dense, dtype=np.float64).reshape(-1)
        (indices,) = np.nonzero(dense)
        return cls(indices=indices, values=dense[indices], dim=dense.size)

    @classmethod
    def zeros(cls, dim: int) -> "SparseVector":
        return cls(indices=np.empty(0, np.int64), values=np.empty(0), dim=dim)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def canonical(self) -> "SparseVector":
        """Canonical form of the vector, itself since construction canonicalizes"""
        return self

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim)
        dense[self.indices] = self.values
        return dense

    def items(self) -> Iterator[tuple[int, float]]:
        return zip(self.indices.tolist(), self.values.tolist(), strict=True)

    def dot(self, other: "SparseVector | np.ndarray") -> float:
        """Inner product with another sparse vector or a dense array

        Raises
        ------
        ShapeError
            If the dimensions differ
        """
        if isinstance(other, SparseVector):
            if other.dim != self.dim:
                raise ShapeError(f"dot of dims {self.dim} and {other.dim}")
            shared, left, right = np.intersect1d(
                self.indices, other.indices, assume_unique=True, return_indices=True
            )
            if not shared.size:
                return 0.0
            return float(self.values[left] @ other.values[right])

        other = np.asarray(other, dtype=np.float64)
        if other.shape != (self.dim,):
            raise ShapeError(f"dot of dim {self.dim} with shape {other.shape}")
        if not self.nnz:
            return 0.0
        return float(self.values @ other[self.indices])

    def scale(self, factor: float) -> "SparseVector":
        if factor == 0.0:
            return SparseVector.zeros(self.dim)
        return SparseVector(indices=self.indices, values=self.values * factor, dim=self.dim)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self) -> int:
        return hash((self.dim, self.indices.tobytes(), self.values.tobytes()))

    def __repr__(self) -> str:
        return f"SparseVector(dim={self.dim}, nnz={self.nnz})"


def as_dense(weights: "SparseVector | np.ndarray", dim: int | None = None) -> np.ndarray:
    """Dense float64 copy of a weight vector given sparsely or densely

    Raises
    ------
    ShapeError
        If ``dim`` is given and differs from the vector length
    """
    if isinstance(weights, SparseVector):
        dense = weights.to_dense()
    else:
        dense = np.array(weights, dtype=np.float64).reshape(-1)
    if dim is not None and dense.size != dim:
        raise ShapeError(f"weights of dim {dense.size}, expected {dim}")
    return dense
