from incremental_glmix.core.models import GlmixModel, GlmModel, LabeledExample, PhaseDataset
from incremental_glmix.core.scoring import glm_score, glmix_score, glmix_scores, sigmoid
from incremental_glmix.core.sparse import SparseVector


__all__ = [
    "GlmModel",
    "GlmixModel",
    "LabeledExample",
    "PhaseDataset",
    "SparseVector",
    "glm_score",
    "glmix_score",
    "glmix_scores",
    "sigmoid",
]
