import numpy as np
import pytest

from incremental_glmix.core.models import LabeledExample, PhaseDataset
from incremental_glmix.core.sparse import SparseVector
from incremental_glmix.hessian import DiagonalHessian, FullHessian
from incremental_glmix.loss import QuadraticLossSpec


def random_sparse(rng: np.random.Generator, dim: int, nnz: int) -> SparseVector:
    indices = np.sort(rng.choice(dim, size=min(nnz, dim), replace=False))
    values = rng.normal(size=indices.size)
    values[values == 0.0] = 1.0
    return SparseVector(indices=indices, values=values, dim=dim)


def random_phase(
    rng: np.random.Generator,
    phase_index: int = 0,
    n_examples: int = 60,
    dim: int = 6,
    nnz: int = 3,
    entities: tuple[str, ...] = ("a", "b", "c"),
    entity_type: str = "member",
    offsets: bool = False,
) -> PhaseDataset:
    examples = []
    for _ in range(n_examples):
        features = random_sparse(rng, dim, nnz)
        entity_ids = {entity_type: str(rng.choice(entities))} if entities else {}
        examples.append(
            LabeledExample(
                features=features,
                label=int(rng.random() < 0.5),
                entity_ids=entity_ids,
                offset=float(rng.normal()) if offsets else 0.0,
            )
        )
    return PhaseDataset(phase_index=phase_index, examples=tuple(examples), feature_dim=dim)


def random_spd(rng: np.random.Generator, dim: int, low: float = 1.0, high: float = 4.0):
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eigenvalues = rng.uniform(low, high, size=dim)
    matrix = (basis * eigenvalues) @ basis.T
    return (matrix + matrix.T) / 2.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def phase(rng):
    return random_phase(rng)


@pytest.fixture
def make_phase(rng):
    def make(**kwargs):
        return random_phase(rng, **kwargs)

    return make


@pytest.fixture
def quadratic_spec(rng):
    def make(dim: int = 5, diagonal: bool = False) -> QuadraticLossSpec:
        if diagonal:
            matrix = DiagonalHessian(rng.uniform(1.0, 4.0, size=dim))
        else:
            matrix = FullHessian(random_spd(rng, dim))
        return QuadraticLossSpec(matrix, rng.normal(size=dim))

    return make
