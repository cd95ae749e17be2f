"""Per-node trained models: motion primitives, identification models, classifier."""
from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from ..bnp_hmm import Hyperparams, fit
from ..dmp import Demonstration, learn_from_demo, minimum_jerk
from ..errors import InvalidInput
from ..introspect import ClassifierModel, IdentificationModel, calibrate
from ..signals import CANONICAL_RATE, extract_features
from ..taskgraph import GoalTransform, TaskGraph, insert_adaptive
from .generator import SkillRegistry, generate_nominal

N_TRAIN = 7
N_CALIBRATION = 7


def _seed(*parts) -> int:
    return zlib.crc32("|".join(map(str, parts)).encode("utf-8"))


class ModelBank:
    """Everything a node needs at run time, keyed by node id.

    Identification models are fit on ``n_train`` nominal trials and
    calibrated on those plus ``n_cal`` further nominal trials.
    """

    def __init__(
        self,
        registry: SkillRegistry | None = None,
        hyper: Hyperparams | None = None,
        seed: int = 0,
        n_train: int = N_TRAIN,
        n_cal: int = N_CALIBRATION,
    ):
        self.registry = registry if registry is not None else SkillRegistry.kitting(seed)
        self.hyper = hyper if hyper is not None else Hyperparams()
        self.seed = seed
        self.n_train = n_train
        self.n_cal = n_cal
        self.id_models: dict[str, IdentificationModel] = {}
        self.classifier: ClassifierModel | None = None

    def nominal_features(self, skill_id: str, start: int, count: int) -> list[np.ndarray]:
        return [
            extract_features(generate_nominal(skill_id, _seed("train", self.seed, skill_id, i), registry=self.registry))
            for i in range(start, start + count)
        ]

    def train_node(self, node_id: str, skill_id: str | None = None) -> IdentificationModel:
        skill_id = skill_id or node_id
        train = self.nominal_features(skill_id, 0, self.n_train)
        model = fit(train, self.hyper, seed=_seed("fit", self.seed, skill_id))
        cal = train + self.nominal_features(skill_id, self.n_train, self.n_cal)
        idm = calibrate(model, cal, node_id=node_id)
        self.id_models[node_id] = idm
        return idm

    def train_graph(self, graph: TaskGraph) -> None:
        for nid, node in graph.nodes.items():
            if nid not in self.id_models:
                self.train_node(nid, node.skill_ref)

    def id_model(self, node_id: str) -> IdentificationModel:
        try:
            return self.id_models[node_id]
        except KeyError:
            raise InvalidInput(f"no identification model for node {node_id!r}") from None

    def adapt(
        self, graph: TaskGraph, parent: str, anomaly: str, demo_goal: np.ndarray, parent_goal: np.ndarray, x0
    ) -> str:
        """Learn a branch from a scripted demonstration ending at ``demo_goal``.

        Fits the branch's motion primitive and identification model, then
        inserts it into ``graph`` with the goal transform measured from the
        demonstration's last frame.
        """
        transform = GoalTransform.between(parent_goal, demo_goal)
        new_id = f"{parent}/{anomaly}"
        parent_skill = graph.node(parent).skill_ref
        dyn = self.registry.register_adaptive(new_id, parent_skill, demo_goal[:3, 3])
        dt = 1.0 / CANONICAL_RATE
        path = minimum_jerk(np.asarray(x0, dtype=float)[:3], demo_goal[:3, 3], dyn.duration, dt)
        self.registry.set_dmp(new_id, learn_from_demo(Demonstration.from_positions(path, dt), n_basis=20))
        insert_adaptive(graph, parent, anomaly, transform, skill_ref=new_id)
        # branch dynamics depend only on the branch id, so a cached model stays valid
        if new_id not in self.id_models:
            self.train_node(new_id, new_id)
        return new_id

    # --- persistence ---------------------------------------------------------
    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"seed": self.seed, "n_train": self.n_train, "n_cal": self.n_cal, "hyper": self.hyper.to_dict(),
                "nodes": sorted(self.id_models)}
        (d / "bank.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
        for nid, idm in self.id_models.items():
            (d / f"id_{nid.replace('/', '__')}.json").write_text(json.dumps(idm.to_dict()), encoding="utf-8")
        if self.classifier is not None:
            (d / "classifier.json").write_text(json.dumps(self.classifier.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, directory, registry: SkillRegistry | None = None) -> "ModelBank":
        d = Path(directory)
        meta = json.loads((d / "bank.json").read_text(encoding="utf-8"))
        bank = cls(registry, Hyperparams.from_dict(meta["hyper"]), meta["seed"], meta["n_train"], meta["n_cal"])
        for nid in meta["nodes"]:
            rec = json.loads((d / f"id_{nid.replace('/', '__')}.json").read_text(encoding="utf-8"))
            bank.id_models[nid] = IdentificationModel.from_dict(rec)
        if (d / "classifier.json").exists():
            bank.classifier = ClassifierModel.from_dict(json.loads((d / "classifier.json").read_text(encoding="utf-8")))
        return bank

