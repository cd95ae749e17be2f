"""Corpora, metrics, experiment pipelines and the command-line interface."""
from .metrics import (
    REFERENCE_VALUES,
    ConfusionMatrix,
    IdentificationMetrics,
    MetricsReport,
    evaluate_classification,
    evaluate_identification,
    evaluate_success,
    match_flags,
)

__all__ = [
    "REFERENCE_VALUES",
    "ConfusionMatrix",
    "IdentificationMetrics",
    "MetricsReport",
    "evaluate_classification",
    "evaluate_identification",
    "evaluate_success",
    "match_flags",
]
