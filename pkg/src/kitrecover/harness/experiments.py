"""End-to-end experiment pipelines shared by the CLI and the acceptance suite."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..bnp_hmm import Hyperparams
from ..introspect import ClassifierModel, classify, detect, flag_times, reactivity_sweep, train_classifier
from ..simworld import AnomalyInjector, ModelBank, Scenario, default_world, run_episode
from ..simworld.episode import ExecutionTrace
from ..taskgraph import GoalTransform, TaskGraph, build_kitting_graph
from .corpus import (
    CLASS_TRAIN_COUNTS,
    classification_corpus,
    identification_corpus,
    make_trainer,
    windows_by_label,
)
from .metrics import ConfusionMatrix, IdentificationMetrics, evaluate_classification, evaluate_identification

RATE = 50.0
TEST_COUNTS = {c: 20 for c in CLASS_TRAIN_COUNTS}
# single-anomaly scenarios covering every learned (node, class) policy
REENACTMENT_CASES = (
    ("HC", "1"), ("HC", "2a"), ("HC", "2b"), ("HC", "3"), ("HC", "4"),
    ("TC", "2a"), ("TC", "3"), ("OS", "2b"), ("OS", "3"), ("NO", "2a"),
)
ADAPT_TC = GoalTransform.from_parts((0.0, 0.02, 0.0), (0.0, 0.0, np.pi / 4))
ADAPT_HC = GoalTransform.from_parts((0.01, 0.0, 0.01))


def train_bank(seed: int = 0, hyper: Hyperparams | None = None, graph: TaskGraph | None = None) -> ModelBank:
    graph = graph or build_kitting_graph()
    bank = ModelBank(hyper=hyper, seed=seed)
    bank.train_graph(graph)
    return bank


@dataclass
class IdentificationResult:
    overall: IdentificationMetrics
    by_node: dict[str, IdentificationMetrics]
    calibration_flags: int
    n_nominal: int
    n_injected: int


def run_identification(
    bank: ModelBank, n_nominal: int = 200, n_injected: int = 200, seed: int = 1, tolerance: float = 1.0
) -> IdentificationResult:
    items = identification_corpus(n_nominal, n_injected, seed, bank.registry)
    flags = [flag_times(detect(bank.id_model(it.skill), it.features)) for it in items]
    events = [it.events for it in items]
    by_node = {}
    for skill in sorted({it.skill for it in items}):
        idx = [i for i, it in enumerate(items) if it.skill == skill]
        by_node[skill] = evaluate_identification([flags[i] for i in idx], [events[i] for i in idx], tolerance)
    cal_flags = 0
    for nid in sorted(bank.id_models):
        skill = nid
        cal = bank.nominal_features(skill, 0, bank.n_train + bank.n_cal)
        cal_flags += sum(len(flag_times(detect(bank.id_model(nid), x))) for x in cal)
    return IdentificationResult(
        evaluate_identification(flags, events, tolerance), by_node, cal_flags, n_nominal, n_injected
    )


def train_default_classifier(
    seed: int = 0, pre: float = 2.0, post: float = 2.0, k_splits: int | None = 3, hyper: Hyperparams | None = None
) -> ClassifierModel:
    train = classification_corpus(CLASS_TRAIN_COUNTS, seed=seed)
    return train_classifier(windows_by_label(train, pre, post), hyper, seed=seed, k_splits=k_splits,
                            pre_window=pre, post_window=post)


def run_classification(
    classifier: ClassifierModel, seed: int = 1, counts=TEST_COUNTS
) -> tuple[ConfusionMatrix, list[str], list[str]]:
    test = classification_corpus(counts, seed=seed)
    truth = [w.label for w in test]
    pred = [classify(classifier, w.crop(classifier.pre_window, classifier.post_window)).label for w in test]
    return evaluate_classification(truth, pred, classifier.labels), truth, pred


def run_reactivity(
    pre_grid: Sequence[float], post_grid: Sequence[float], seed: int = 0, test_seed: int = 1,
    k_splits: int | None = 3, hyper: Hyperparams | None = None,
) -> np.ndarray:
    train = classification_corpus(CLASS_TRAIN_COUNTS, seed=seed)
    test = classification_corpus(TEST_COUNTS, seed=test_seed)
    return reactivity_sweep(make_trainer(hyper, seed, k_splits), train, test, pre_grid, post_grid)


def reenactment_scenarios(n_per_case: int = 6, seed: int = 0) -> list[Scenario]:
    out = []
    for rep in range(n_per_case):
        for cls, node in REENACTMENT_CASES:
            s = seed * 1000 + len(out)
            onset = 0.6 + 0.1 * rep
            out.append(Scenario(
                seed=s, name=f"reenact-{cls}@{node}-{rep}", modality="perfect",
                injectors=[AnomalyInjector(cls, node, onset, seed=s)],
            ))
    return out


def persistent_tc_scenario(seed: int = 0, modality: str = "perfect") -> Scenario:
    return Scenario(
        seed=seed, name="persistent-TC@2a", modality=modality,
        injectors=[AnomalyInjector("TC", "2a", 0.8, persistent=True, seed=seed)],
        demonstrations={("2a", "TC"): ADAPT_TC},
    )


def adaptation_over_adaptation_scenario(seed: int = 0, modality: str = "perfect") -> Scenario:
    return Scenario(
        seed=seed, name="adaptation-over-adaptation", modality=modality,
        injectors=[
            AnomalyInjector("TC", "2a", 0.8, persistent=True, seed=seed),
            AnomalyInjector("HC", "2a/TC", 0.6, persistent=True, seed=seed + 1),
        ],
        demonstrations={("2a", "TC"): ADAPT_TC, ("2a/TC", "HC"): ADAPT_HC},
    )


def self_healing_scenario(seed: int = 0) -> Scenario:
    """A slip at node 3 that looks like a collision, classified without ground truth."""
    return Scenario(
        seed=seed, name="self-healing-OS@3", modality="imperfect",
        injectors=[AnomalyInjector("OS", "3", 1.0, signature="HC", seed=seed)],
    )


def run_scenarios(
    bank: ModelBank, scenarios: Sequence[Scenario], graph: TaskGraph | None = None, fresh_graph: bool = True
) -> list[ExecutionTrace]:
    """Run each scenario on its own copy of ``graph`` (fixed order)."""
    base = graph or build_kitting_graph()
    traces = []
    for sc in scenarios:
        g = copy.deepcopy(base) if fresh_graph else base
        traces.append(run_episode(g, bank, sc))
    return traces


def multi_object_scenario(n_objects: int = 3, seed: int = 0) -> Scenario:
    return Scenario(
        seed=seed, name=f"nominal-{n_objects}-objects", world=default_world(n_objects, seed),
    )
