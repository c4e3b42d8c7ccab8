from incremental_glmix.evaluation.benchmark import (
    BenchmarkReport,
    run_benchmark,
    tune_forgetting_factor,
)
from incremental_glmix.evaluation.drift import DriftStream, generate_drift_stream
from incremental_glmix.evaluation.metrics import auc, model_auc


__all__ = [
    "BenchmarkReport",
    "DriftStream",
    "auc",
    "generate_drift_stream",
    "model_auc",
    "run_benchmark",
    "tune_forgetting_factor",
]
