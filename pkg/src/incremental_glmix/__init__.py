"""Incremental training of logistic-regression and GLMix models"""

from incremental_glmix.core import GlmixModel, GlmModel, LabeledExample, PhaseDataset, SparseVector
from incremental_glmix.scheduler import StreamState, run_stream, step
from incremental_glmix.trainer import (
    Cold,
    Incremental,
    Warm,
    block_coordinate_descent,
    train_glm,
    train_random_effects,
)


__all__ = [
    "Cold",
    "GlmModel",
    "GlmixModel",
    "Incremental",
    "LabeledExample",
    "PhaseDataset",
    "SparseVector",
    "StreamState",
    "Warm",
    "block_coordinate_descent",
    "run_stream",
    "step",
    "train_glm",
    "train_random_effects",
]
