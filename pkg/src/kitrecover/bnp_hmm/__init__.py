"""Sequence models: (sticky HDP-)HMMs with Gaussian or VAR(1) observations."""
from .model import (
    ForwardFilter,
    HmmModel,
    Hyperparams,
    cumulative_log_likelihood,
    forward_gradient,
    log_likelihood,
    viterbi,
)
from .select import kfold_split, select_model_kfold
from .vb import FitResult, empirical_bayes_init, fit, fit_single

__all__ = [
    "ForwardFilter",
    "FitResult",
    "HmmModel",
    "Hyperparams",
    "cumulative_log_likelihood",
    "empirical_bayes_init",
    "fit",
    "fit_single",
    "forward_gradient",
    "kfold_split",
    "log_likelihood",
    "select_model_kfold",
    "viterbi",
]
