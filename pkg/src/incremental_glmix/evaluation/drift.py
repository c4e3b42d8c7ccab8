import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from incremental_glmix.core.models import LabeledExample, PhaseDataset
from incremental_glmix.core.sparse import SparseVector
from incremental_glmix.schemas import DriftGenConfig


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PhaseTruth:
    """Hidden parameters a phase was drawn from

    Attributes
    ----------
    phase_index : int
        The phase
    fixed_weights : np.ndarray
        Population weights, shared by every phase
    entity_weights : Mapping[str, np.ndarray]
        Entity id mapped to the entity's deviation in this phase
    probabilities : np.ndarray
        True positive probability of every example of the phase
    """

    phase_index: int
    fixed_weights: np.ndarray
    entity_weights: Mapping[str, np.ndarray]
    probabilities: np.ndarray

    def as_record(self) -> dict:
        return {
            "phase_index": self.phase_index,
            "fixed_weights": self.fixed_weights.tolist(),
            "entity_weights": {k: v.tolist() for k, v in self.entity_weights.items()},
            "probabilities": self.probabilities.tolist(),
        }


@dataclass(frozen=True, eq=False)
class DriftStream:
    phases: tuple[PhaseDataset, ...]
    truth: tuple[PhaseTruth, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.phases)


def entity_names(n_entities: int) -> list[str]:
    width = max(4, len(str(n_entities - 1)))
    return [f"e{i:0{width}d}" for i in range(n_entities)]


def activity_distribution(n_entities: int, skew: float) -> np.ndarray:
    """Zipf-like probability of each entity owning an example, uniform when skew is 0"""
    weights = 1.0 / np.arange(1, n_entities + 1, dtype=np.float64) ** skew
    return weights / weights.sum()


def _draw_features(
    rng: np.random.Generator, config: DriftGenConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted active indices and their values, one row per example"""
    n, k = config.examples_per_phase, config.nnz_per_example
    indices = np.argsort(rng.random((n, config.feature_dim - 1)), axis=1)[:, :k] + 1
    values = rng.normal(size=(n, k)) / np.sqrt(k)
    order = np.argsort(indices, axis=1)
    return np.take_along_axis(indices, order, axis=1), np.take_along_axis(values, order, axis=1)


def _draw_phase(
    rng: np.random.Generator,
    t: int,
    config: DriftGenConfig,
    fixed_weights: np.ndarray,
    deviations: np.ndarray,
    activity: np.ndarray,
    names: list[str],
) -> tuple[PhaseDataset, np.ndarray]:
    n = config.examples_per_phase
    owners = rng.choice(config.n_entities, size=n, p=activity)
    indices, values = _draw_features(rng, config)

    dense = np.zeros((n, config.feature_dim))
    dense[:, 0] = 1.0
    np.put_along_axis(dense, indices, values, axis=1)
    logits = dense @ fixed_weights + np.einsum("ij,ij->i", dense, deviations[owners])
    probabilities = expit(logits)
    labels = (rng.random(n) < probabilities).astype(int)

    examples = tuple(
        LabeledExample(
            features=SparseVector(
                indices=np.concatenate([[0], indices[i]]),
                values=np.concatenate([[1.0], values[i]]),
                dim=config.feature_dim,
            ),
            label=int(labels[i]),
            entity_ids={config.entity_type: names[owners[i]]},
        )
        for i in range(n)
    )
    return PhaseDataset(t, examples, config.feature_dim), probabilities


def generate_drift_stream(config: DriftGenConfig = DriftGenConfig()) -> DriftStream:
    """Draw a seeded stream of phases together with the weights behind every phase

    Parameters
    ----------
    config : DriftGenConfig
        Seed, sizes, drift rate and activity skew

    Returns
    -------
    DriftStream
        The phases, indexed from 0, and the hidden truth of each phase. The same
        config always gives the same stream; with ``drift_rate`` 0 the entity weights
        are the same in every phase.
    """
    rng = np.random.default_rng(config.seed)
    names = entity_names(config.n_entities)
    activity = activity_distribution(config.n_entities, config.entity_activity_skew)

    fixed_weights = rng.normal(scale=config.fixed_weight_scale, size=config.feature_dim)
    deviations = rng.normal(
        scale=config.entity_weight_scale, size=(config.n_entities, config.feature_dim)
    )

    phases, truth = [], []
    for t in range(config.n_phases):
        if t > 0 and config.drift_rate > 0:
            deviations = deviations + rng.normal(scale=config.drift_rate, size=deviations.shape)
        phase, probabilities = _draw_phase(
            rng, t, config, fixed_weights, deviations, activity, names
        )
        phases.append(phase)
        truth.append(
            PhaseTruth(
                phase_index=t,
                fixed_weights=fixed_weights.copy(),
                entity_weights={name: deviations[i].copy() for i, name in enumerate(names)},
                probabilities=probabilities,
            )
        )
        logger.debug("Phase %d: %d examples, %.3f positive", t, len(phase), phase.labels.mean())

    logger.info(
        "Generated %d phases of %d examples (drift_rate=%s)",
        config.n_phases,
        config.examples_per_phase,
        config.drift_rate,
    )
    return DriftStream(tuple(phases), tuple(truth))
