import math

import numpy as np
from scipy.special import expit

from incremental_glmix.core.models import GlmixModel, GlmModel, LabeledExample, PhaseDataset
from incremental_glmix.core.sparse import SparseVector, as_dense
from incremental_glmix.errors import DomainError, ShapeError


def sigmoid(z: float) -> float:
    """Logistic function through the overflow-free branch of expit

    Raises
    ------
    DomainError
        If z is not finite
    """
    if not math.isfinite(z):
        raise DomainError(f"sigmoid of non-finite value {z}")
    return float(expit(z))


def glm_score(model: GlmModel, features: SparseVector, offset: float = 0.0) -> float:
    """Logit of one component, w^T x + offset

    Parameters
    ----------
    model : GlmModel
        The scored component
    features : SparseVector
        Features of the example
    offset : float
        Fixed contribution added to the logit

    Returns
    -------
    float
        The logit

    Raises
    ------
    ShapeError
        If the feature dimension differs from the model dimension
    """
    if features.dim != model.dim:
        raise ShapeError(f"features of dim {features.dim} for a model of dim {model.dim}")
    return model.weights.dot(features) + offset


def glmix_score(model: GlmixModel, example: LabeledExample) -> float:
    """Sum of the fixed-effect logit and the logits of the matching entity models

    An entity id with no trained model contributes 0, the same as a fresh zero-mean model.
    The example offset is a training-time residual and is not part of the score.

    Parameters
    ----------
    model : GlmixModel
        The scored model
    example : LabeledExample
        Example carrying its entity ids

    Returns
    -------
    float
        The GLMix logit
    """
    score = glm_score(model.fixed, example.features)
    for entity_type, models in model.random_effects.items():
        entity_model = models.get(example.entity_ids.get(entity_type))
        if entity_model is not None:
            score += glm_score(entity_model, example.features)
    return score


def random_effect_scores(
    model: GlmixModel, entity_type: str, dataset: PhaseDataset
) -> np.ndarray:
    """Logit contribution of one entity type for every example of a dataset"""
    _check_dims(model, dataset)
    scores = np.zeros(len(dataset))
    models = model.random_effects.get(entity_type, {})
    if not models or not len(dataset):
        return scores

    row_of = {entity_id: row for row, entity_id in enumerate(models)}
    rows = np.array([row_of.get(i, -1) for i in dataset.entity_ids(entity_type)])
    known = np.nonzero(rows >= 0)[0]
    if known.size:
        weights = np.vstack([m.dense_weights() for m in models.values()])
        features = dataset.design_matrix[known]
        scores[known] = np.asarray(features.multiply(weights[rows[known]]).sum(axis=1)).ravel()
    return scores


def fixed_effect_scores(model: GlmixModel, dataset: PhaseDataset) -> np.ndarray:
    _check_dims(model, dataset)
    return dataset.design_matrix @ model.fixed.dense_weights()


def glmix_scores(model: GlmixModel, dataset: PhaseDataset) -> np.ndarray:
    """Vectorized glmix_score over every example of a dataset"""
    scores = fixed_effect_scores(model, dataset)
    for entity_type in model.entity_types:
        scores = scores + random_effect_scores(model, entity_type, dataset)
    return scores


def _check_dims(model: GlmixModel, dataset: PhaseDataset):
    if dataset.feature_dim != model.dim:
        raise ShapeError(f"dataset of dim {dataset.feature_dim} for a model of dim {model.dim}")


def linear_predictor(weights: SparseVector | np.ndarray, dataset: PhaseDataset) -> np.ndarray:
    """Logits X w + offsets of every example of a dataset

    Raises
    ------
    ShapeError
        If the weight dimension differs from the dataset feature dimension
    """
    w = as_dense(weights, dataset.feature_dim)
    return dataset.design_matrix @ w + dataset.offsets
