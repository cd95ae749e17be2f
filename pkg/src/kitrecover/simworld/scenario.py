"""Declarative scenarios and their INI-style text files.

Example::

    [scenario]
    seed = 7
    modality = perfect
    n_objects = 1
    budget_factor = 20

    [injector.0]
    class = TC
    node = 2a
    onset = 0.8
    persistent = true

    [demonstration.2a/TC]
    translation = 0, 0.02, 0
    rotvec = 0, 0, 0.785
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import InvalidInput
from ..taskgraph import KITTING_NODES, GoalTransform
from .inject import AnomalyInjector
from .world import WorldConfig, WorldObject, default_world

MODALITIES = ("perfect", "imperfect")
_CHAIN = {nid: i for i, (nid, _) in enumerate(KITTING_NODES)}


def _schedule_key(inj: AnomalyInjector):
    # nominal-schedule order: object, execution number, position in the chain, onset
    root = inj.node.split("/")[0]
    return (inj.obj, inj.occurrence, _CHAIN.get(root, len(_CHAIN)), inj.node.count("/"), inj.onset)


@dataclass
class Scenario:
    seed: int = 0
    world: WorldConfig = field(default_factory=default_world)
    injectors: list[AnomalyInjector] = field(default_factory=list)
    modality: str = "perfect"
    budget_factor: float = 20.0
    demonstrations: dict[tuple[str, str], GoalTransform] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise InvalidInput(f"modality must be one of {MODALITIES}")
        if self.budget_factor <= 0:
            raise InvalidInput("budget_factor must be positive")
        for inj in self.injectors:
            if not 0 <= inj.obj < len(self.world.objects):
                raise InvalidInput(f"injector refers to missing object {inj.obj}")
        self.injectors = sorted(self.injectors, key=_schedule_key)

    # --- text form -------------------------------------------------------------
    def dumps(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["scenario"] = {
            "name": self.name,
            "seed": str(self.seed),
            "modality": self.modality,
            "budget_factor": repr(self.budget_factor),
            "world_seed": str(self.world.seed),
        }
        for i, o in enumerate(self.world.objects):
            cp[f"object.{i}"] = {
                "id": o.id,
                "position": ", ".join(repr(float(v)) for v in o.position),
                "height": repr(o.height),
                "mass": repr(o.mass),
            }
        for i, inj in enumerate(self.injectors):
            sec = {
                "class": inj.cls, "node": inj.node, "onset": repr(inj.onset),
                "persistent": str(inj.persistent).lower(), "occurrence": str(inj.occurrence),
                "object": str(inj.obj), "seed": str(inj.seed),
            }
            if inj.duration is not None:
                sec["duration"] = repr(inj.duration)
            if inj.magnitude is not None:
                sec["magnitude"] = repr(inj.magnitude)
            if inj.signature is not None:
                sec["signature"] = inj.signature
            cp[f"injector.{i}"] = sec
        for (node, cls), T in self.demonstrations.items():
            cp[f"demonstration.{node}/{cls}"] = {
                "translation": ", ".join(repr(float(v)) for v in T.matrix[:3, 3]),
                "rotvec": ", ".join(repr(float(v)) for v in Rotation.from_matrix(T.matrix[:3, :3]).as_rotvec()),
            }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise InvalidInput(f"malformed scenario file: {exc}") from exc
        if "scenario" not in cp:
            raise InvalidInput("scenario file needs a [scenario] section")
        head = cp["scenario"]
        objs = []
        for sec in sorted((s for s in cp.sections() if s.startswith("object.")), key=lambda s: int(s.split(".")[1])):
            o = cp[sec]
            objs.append(WorldObject(
                o.get("id", sec), tuple(_floats(o["position"], 3)),
                o.getfloat("height", 0.08), o.getfloat("mass", 0.3),
            ))
        world_seed = head.getint("world_seed", 0)
        world = WorldConfig(objs, seed=world_seed) if objs else default_world(head.getint("n_objects", 1), world_seed)
        injectors = []
        for sec in (s for s in cp.sections() if s.startswith("injector.")):
            s = cp[sec]
            try:
                injectors.append(AnomalyInjector(
                    cls=s["class"], node=s["node"], onset=s.getfloat("onset"),
                    duration=s.getfloat("duration") if "duration" in s else None,
                    magnitude=s.getfloat("magnitude") if "magnitude" in s else None,
                    persistent=s.getboolean("persistent", False), occurrence=s.getint("occurrence", 1),
                    obj=s.getint("object", 0), signature=s.get("signature") or None, seed=s.getint("seed", 0),
                ))
            except (KeyError, ValueError) as exc:
                raise InvalidInput(f"bad injector section [{sec}]: {exc}") from exc
        demos = {}
        for sec in (s for s in cp.sections() if s.startswith("demonstration.")):
            key = sec[len("demonstration."):]
            node, _, klass = key.rpartition("/")
            if not node:
                raise InvalidInput(f"demonstration section must be named demonstration.<node>/<class>: {sec}")
            d = cp[sec]
            demos[(node, klass)] = GoalTransform.from_parts(
                _floats(d.get("translation", "0,0,0"), 3), _floats(d.get("rotvec", "0,0,0"), 3)
            )
        return cls(
            seed=head.getint("seed", 0), world=world, injectors=injectors,
            modality=head.get("modality", "perfect"), budget_factor=head.getfloat("budget_factor", 20.0),
            demonstrations=demos, name=head.get("name", ""),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _floats(text: str, n: int) -> list[float]:
    vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if len(vals) != n:
        raise InvalidInput(f"expected {n} numbers, got {text!r}")
    if not np.all(np.isfinite(vals)):
        raise InvalidInput("values must be finite")
    return vals
