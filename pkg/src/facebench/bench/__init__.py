"""Estimator composition, cached experiment execution and reporting."""
from .config import (EstimatorSpec, ExperimentConfig, estimator_from_dict, load_experiment,
                     parse_estimator, standard_estimators)
from .pipeline import PipelineTrace, SubjectResult, run_estimator
from .report import report
from .runner import ExperimentResult, run_experiment
from .scores import BenchmarkMetrics, benchmark_metrics, pearson, rate_of_inconsistency

__all__ = [
    "EstimatorSpec", "ExperimentConfig", "estimator_from_dict", "load_experiment", "parse_estimator",
    "standard_estimators", "PipelineTrace", "SubjectResult", "run_estimator", "report",
    "ExperimentResult", "run_experiment", "BenchmarkMetrics", "benchmark_metrics", "pearson",
    "rate_of_inconsistency",
]
