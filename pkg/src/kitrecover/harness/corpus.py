"""Seeded synthetic corpora for identification and classification."""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..bnp_hmm import Hyperparams
from ..introspect import ClassifierModel, LabeledWindow, train_classifier
from ..signals import CANONICAL_RATE, extract_features
from ..simworld.generator import SkillRegistry, generate_nominal
from ..simworld.inject import AnomalyInjector, inject, injected_span

SKILLS = ("1", "2a", "2b", "3", "4")
# where each anomaly class can physically happen in the kitting task
VALID_SKILLS = {
    "HC": ("1", "2a", "2b", "3", "4"),
    "TC": ("2a", "3"),
    "OS": ("2b", "3"),
    "NO": ("2a",),
    "WC": ("3",),
}
CLASS_TRAIN_COUNTS = {"HC": 18, "TC": 17, "OS": 18, "NO": 15, "WC": 17}


def _seed(*parts) -> int:
    return zlib.crc32("|".join(map(str, parts)).encode("utf-8"))


def sample_injector(cls: str, skill: str, duration: float, rng: np.random.Generator) -> AnomalyInjector:
    """Onset in the middle of the skill; a missed grasp shows up late, at closing time."""
    lo, hi = (0.6, 0.75) if cls == "NO" else (0.35, 0.6)
    onset = float(np.round(rng.uniform(lo * duration, hi * duration), 2))
    return AnomalyInjector(cls, skill, onset, seed=int(rng.integers(2**31)))


@dataclass
class IdentificationItem:
    skill: str
    features: np.ndarray
    events: list[tuple[float, float]]
    cls: str | None


def identification_corpus(
    n_nominal: int = 200,
    n_injected: int = 200,
    seed: int = 0,
    registry: SkillRegistry | None = None,
) -> list[IdentificationItem]:
    """Nominal trials spread over the skills plus injected trials cycling
    through every valid (class, skill) combination."""
    reg = registry if registry is not None else SkillRegistry.kitting()
    items = []
    for i in range(n_nominal):
        skill = SKILLS[i % len(SKILLS)]
        tr = generate_nominal(skill, _seed("id-nominal", seed, i), registry=reg)
        items.append(IdentificationItem(skill, extract_features(tr), [], None))
    combos = [(c, s) for c, skills in VALID_SKILLS.items() for s in skills]
    rng = np.random.default_rng(_seed("id-injected", seed))
    for i in range(n_injected):
        cls, skill = combos[i % len(combos)]
        tr = generate_nominal(skill, _seed("id-injected", seed, i), registry=reg)
        inj = sample_injector(cls, skill, float(tr.t[-1]), rng)
        items.append(IdentificationItem(skill, extract_features(inject(tr, inj)), [injected_span(tr, inj)], cls))
    return items


def classification_corpus(
    counts: Mapping[str, int] = CLASS_TRAIN_COUNTS,
    seed: int = 0,
    registry: SkillRegistry | None = None,
    rate: float = CANONICAL_RATE,
) -> list[LabeledWindow]:
    """Injected trials with the flag placed at the injection onset."""
    reg = registry if registry is not None else SkillRegistry.kitting()
    out = []
    for cls, n in counts.items():
        rng = np.random.default_rng(_seed("cls", seed, cls))
        skills = VALID_SKILLS[cls]
        for i in range(n):
            skill = skills[i % len(skills)]
            tr = generate_nominal(skill, _seed("cls", seed, cls, i), registry=reg)
            inj = sample_injector(cls, skill, float(tr.t[-1]), rng)
            feats = extract_features(inject(tr, inj))
            out.append(LabeledWindow(cls, feats, int(round(inj.onset * rate)), rate))
    return out


def windows_by_label(windows: Sequence[LabeledWindow], pre: float, post: float) -> dict[str, list[np.ndarray]]:
    out: dict[str, list[np.ndarray]] = {}
    for w in windows:
        out.setdefault(w.label, []).append(w.crop(pre, post))
    return out


def make_trainer(hyper: Hyperparams | None = None, seed: int = 0, k_splits: int | None = None):
    """Trainer callable for :func:`kitrecover.introspect.reactivity_sweep`."""

    def trainer(by_label, pre, post) -> ClassifierModel:
        return train_classifier(by_label, hyper, seed=seed, k_splits=k_splits, pre_window=pre, post_window=post)

    return trainer
