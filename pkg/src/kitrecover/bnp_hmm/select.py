"""K-fold model selection over restarts and candidate hyperparameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInput
from .model import HmmModel, Hyperparams, log_likelihood
from .vb import fit


@dataclass
class FoldScore:
    candidate: int
    fold: int
    test_mean: float


def kfold_split(n: int, k_splits: int, seed: int | None = 0):
    """Shuffled fold assignment; yields ``(train_idx, test_idx)`` per fold."""
    if k_splits < 2:
        raise InvalidInput("k_splits must be >= 2")
    if n < k_splits:
        raise InvalidInput(f"need at least {k_splits} trials for {k_splits}-fold selection, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k_splits)
    for i in range(k_splits):
        test = np.sort(folds[i])
        train = np.sort(np.concatenate([folds[j] for j in range(k_splits) if j != i]))
        yield train, test


def select_model_kfold(
    trials,
    k_splits: int = 3,
    hyper: Hyperparams | list[Hyperparams] | None = None,
    seed: int | None = 0,
    allocation: str = "sticky_hdp",
    observation: str = "var",
    return_scores: bool = False,
    **fit_kwargs,
):
    """Fit on every training fold and return the model with the highest mean
    held-out log-likelihood.

    ``hyper`` may be a list of candidate settings; every candidate is run
    through the same folds.  Ties go to the lowest (candidate, fold) index.
    """
    cands = [Hyperparams()] if hyper is None else (list(hyper) if isinstance(hyper, (list, tuple)) else [hyper])
    trials = list(trials)
    splits = list(kfold_split(len(trials), k_splits, seed))
    best_model: HmmModel | None = None
    best_score = -np.inf
    scores: list[FoldScore] = []
    for ci, hp in enumerate(cands):
        for fi, (train, test) in enumerate(splits):
            model = fit([trials[i] for i in train], hp, allocation, observation, seed=seed, **fit_kwargs)
            mean_ll = float(np.mean([log_likelihood(model, trials[i]) for i in test]))
            scores.append(FoldScore(ci, fi, mean_ll))
            if mean_ll > best_score:
                best_score, best_model = mean_ll, model
    return (best_model, scores) if return_scores else best_model
