"""Online anomaly identification and windowed anomaly classification.

Identification thresholds the forward gradient of a skill's nominal model::

    flag  iff  grad L_t < grad_min - grad_range / 2

where ``grad_min``/``grad_max`` are taken over calibration trials.
Classification scores a window around a flag under every per-class model
and picks the highest cumulative log-likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .bnp_hmm import (
    ForwardFilter,
    HmmModel,
    Hyperparams,
    fit,
    forward_gradient,
    log_likelihood,
    select_model_kfold,
)
from .errors import InvalidInput
from .signals import CANONICAL_RATE

ANOMALY_CLASSES = ("HC", "TC", "OS", "NO", "WC")
DEFAULT_DEBOUNCE = 1.0
DEFAULT_WINDOW = 2.0


@dataclass
class IdentificationModel:
    model: HmmModel
    grad_min: float
    grad_max: float
    node_id: str = ""
    debounce: float = DEFAULT_DEBOUNCE

    def __post_init__(self):
        if self.grad_max < self.grad_min:
            raise InvalidInput("grad_max must be >= grad_min")

    @property
    def grad_range(self) -> float:
        return self.grad_max - self.grad_min

    @property
    def threshold(self) -> float:
        return self.grad_min - self.grad_range / 2.0

    def to_dict(self) -> dict:
        return {
            "format": "kitrecover.identification",
            "version": 1,
            "node_id": self.node_id,
            "grad_min": self.grad_min,
            "grad_max": self.grad_max,
            "debounce": self.debounce,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IdentificationModel":
        return cls(HmmModel.from_dict(d["model"]), d["grad_min"], d["grad_max"], d.get("node_id", ""), d["debounce"])


@dataclass(frozen=True)
class AnomalyFlag:
    t: float
    node_id: str
    gradient_at_trigger: float


@dataclass(frozen=True)
class AnomalyLabel:
    label: str
    loglik: Mapping[str, float]


def calibrate(
    model: HmmModel, nominal_trials: Sequence[np.ndarray], node_id: str = "", debounce: float = DEFAULT_DEBOUNCE
) -> IdentificationModel:
    """Collect forward-gradient extremes over nominal trials."""
    if len(nominal_trials) == 0:
        raise InvalidInput("calibration needs at least one nominal trial")
    grads = [forward_gradient(model, x) for x in nominal_trials]
    if any(g.size == 0 for g in grads):
        raise InvalidInput("calibration trials must be non-empty")
    lo = float(min(g.min() for g in grads))
    hi = float(max(g.max() for g in grads))
    return IdentificationModel(model, lo, hi, node_id, debounce)


class Detector:
    """Streaming detector for one skill execution.

    ``step`` consumes one feature vector and returns an :class:`AnomalyFlag`
    or ``None``.  Triggers within ``debounce`` seconds of the previous flag
    are suppressed.
    """

    def __init__(self, id_model: IdentificationModel, rate: float = CANONICAL_RATE, t0: float = 0.0):
        self.id_model = id_model
        self.rate = rate
        self.t0 = t0
        self.filter = ForwardFilter(id_model.model)
        self.last_flag_t: float | None = None
        self.last_gradient = np.nan

    def step(self, x_t, t: float | None = None) -> AnomalyFlag | None:
        if t is None:
            t = self.t0 + self.filter.t / self.rate
        g = self.filter.update(x_t)
        self.last_gradient = g
        if g < self.id_model.threshold:
            if self.last_flag_t is None or t - self.last_flag_t >= self.id_model.debounce - 1e-9:
                self.last_flag_t = t
                return AnomalyFlag(float(t), self.id_model.node_id, float(g))
        return None


def detect(
    id_model: IdentificationModel, features, times=None, rate: float = CANONICAL_RATE
) -> list[AnomalyFlag | None]:
    """Run the streaming detector over a whole sequence; one entry per step."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != id_model.model.dim:
        raise InvalidInput("feature dimension does not match the identification model")
    times = np.arange(X.shape[0]) / rate if times is None else np.asarray(times, dtype=float)
    det = Detector(id_model, rate)
    return [det.step(x, float(t)) for x, t in zip(X, times)]


def flag_times(flags: Sequence[AnomalyFlag | None]) -> list[float]:
    return [f.t for f in flags if f is not None]


# ----------------------------------------------------------------- classification

@dataclass
class ClassifierModel:
    labels: tuple[str, ...]
    models: dict[str, HmmModel]
    pre_window: float = DEFAULT_WINDOW
    post_window: float = DEFAULT_WINDOW
    rate: float = CANONICAL_RATE

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if len(set(self.labels)) != len(self.labels):
            raise InvalidInput("class labels must be unique")
        if self.pre_window <= 0 or self.post_window <= 0:
            raise InvalidInput("analysis windows must be positive")
        missing = [lab for lab in self.labels if lab not in self.models]
        if missing:
            raise InvalidInput(f"no model for labels {missing}")

    def to_dict(self) -> dict:
        return {
            "format": "kitrecover.classifier",
            "version": 1,
            "labels": list(self.labels),
            "pre_window": self.pre_window,
            "post_window": self.post_window,
            "rate": self.rate,
            "models": {lab: self.models[lab].to_dict() for lab in self.labels},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        models = {lab: HmmModel.from_dict(m) for lab, m in d["models"].items()}
        return cls(tuple(d["labels"]), models, d["pre_window"], d["post_window"], d.get("rate", CANONICAL_RATE))


def extract_window(features, flag_index: int, pre: float, post: float, rate: float = CANONICAL_RATE) -> np.ndarray:
    """Samples from ``pre`` seconds before to ``post`` seconds after ``flag_index``,
    truncated at the sequence bounds."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    lo = max(0, flag_index - int(round(pre * rate)))
    hi = min(X.shape[0], flag_index + int(round(post * rate)) + 1)
    return X[lo:hi]


def classify(classifier: ClassifierModel, window) -> AnomalyLabel:
    """Argmax of the window's cumulative log-likelihood over the class models."""
    W = np.atleast_2d(np.asarray(window, dtype=float))
    if W.shape[0] < 2:
        raise InvalidInput("classification window needs at least 2 samples")
    scores = {lab: log_likelihood(classifier.models[lab], W) for lab in classifier.labels}
    values = np.array([scores[lab] for lab in classifier.labels])
    return AnomalyLabel(classifier.labels[int(np.argmax(values))], scores)


def train_classifier(
    windows_by_label: Mapping[str, Sequence[np.ndarray]],
    hyper: Hyperparams | None = None,
    seed: int = 0,
    k_splits: int | None = 3,
    pre_window: float = DEFAULT_WINDOW,
    post_window: float = DEFAULT_WINDOW,
    rate: float = CANONICAL_RATE,
    **fit_kwargs,
) -> ClassifierModel:
    """One sequence model per label; k-fold selected when ``k_splits`` is set."""
    hyper = Hyperparams() if hyper is None else hyper
    models = {}
    for i, (label, wins) in enumerate(windows_by_label.items()):
        wins = [np.asarray(w, dtype=float) for w in wins]
        if k_splits and len(wins) >= k_splits:
            models[label] = select_model_kfold(wins, k_splits, hyper, seed=seed + i, **fit_kwargs)
        else:
            models[label] = fit(wins, hyper, seed=seed + i, **fit_kwargs)
    return ClassifierModel(tuple(windows_by_label), models, pre_window, post_window, rate)


@dataclass
class LabeledWindow:
    """A feature sequence with a flag position and its true class."""

    label: str
    features: np.ndarray
    flag_index: int
    rate: float = CANONICAL_RATE

    def crop(self, pre: float, post: float) -> np.ndarray:
        return extract_window(self.features, self.flag_index, pre, post, self.rate)


def per_class_accuracy(truth: Sequence[str], pred: Sequence[str], labels: Sequence[str]) -> float:
    """Mean of the per-class true-positive rates (confusion-matrix diagonal)."""
    rates = []
    for lab in labels:
        idx = [i for i, t in enumerate(truth) if t == lab]
        if idx:
            rates.append(np.mean([pred[i] == lab for i in idx]))
    return float(np.mean(rates)) if rates else float("nan")


Trainer = Callable[[Mapping[str, Sequence[np.ndarray]], float, float], ClassifierModel]


def reactivity_sweep(
    trainer: Trainer,
    train: Sequence[LabeledWindow],
    test: Sequence[LabeledWindow],
    pre_grid: Sequence[float],
    post_grid: Sequence[float],
) -> np.ndarray:
    """Accuracy matrix ``acc[i, j]`` for window ``(pre_grid[i], post_grid[j])``.

    ``trainer(windows_by_label, pre, post)`` builds a classifier from cropped
    training windows; accuracy is the mean per-class true-positive rate on
    the cropped test windows.
    """
    pre_grid, post_grid = list(pre_grid), list(post_grid)
    if not pre_grid or not post_grid:
        raise InvalidInput("window grids must be non-empty")
    labels = list(dict.fromkeys(w.label for w in train))
    acc = np.empty((len(pre_grid), len(post_grid)))
    for i, pre in enumerate(pre_grid):
        for j, post in enumerate(post_grid):
            by_label: dict[str, list[np.ndarray]] = {lab: [] for lab in labels}
            for w in train:
                by_label[w.label].append(w.crop(pre, post))
            clf = trainer(by_label, pre, post)
            pred = [classify(clf, w.crop(pre, post)).label for w in test]
            acc[i, j] = per_class_accuracy([w.label for w in test], pred, labels)
    return acc
