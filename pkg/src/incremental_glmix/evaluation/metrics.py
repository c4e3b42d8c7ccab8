from collections.abc import Sequence

import numpy as np
from scipy.stats import rankdata

from incremental_glmix.core.models import GlmixModel, PhaseDataset
from incremental_glmix.core.scoring import glmix_scores
from incremental_glmix.errors import DataValidationError, ShapeError, UndefinedMetricError


def auc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Area under the ROC curve through the Mann-Whitney rank statistic

    Tied scores share their average rank, so a tie between a positive and a negative
    counts one half.

    Parameters
    ----------
    scores : Sequence[float] | np.ndarray
        Real-valued scores, higher meaning more likely positive
    labels : Sequence[int] | np.ndarray
        Binary labels

    Returns
    -------
    float
        Probability that a random positive outscores a random negative

    Raises
    ------
    ShapeError
        If scores and labels differ in length
    DataValidationError
        If a label is not binary or a score is not finite
    UndefinedMetricError
        If only one class is present
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores for {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataValidationError("labels must be 0 or 1")
    if not np.all(np.isfinite(scores)):
        raise DataValidationError("scores must be finite")

    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")

    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def model_auc(model: GlmixModel, dataset: PhaseDataset) -> float:
    """AUC of a model's GLMix logits on a held-out phase"""
    return auc(glmix_scores(model, dataset), dataset.labels)
