"""Discrete kitting world: objects waiting in a collection bin and a box."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInput

PRE_PICK_HEIGHT = 0.12
ABOVE_BOX_HEIGHT = 0.15


@dataclass(frozen=True)
class WorldObject:
    id: str
    position: tuple[float, float, float]
    height: float = 0.08
    mass: float = 0.3

    def __post_init__(self):
        if not np.all(np.isfinite(self.position)) or len(self.position) != 3:
            raise InvalidInput("object position must be 3 finite numbers")
        if self.height <= 0 or self.mass <= 0:
            raise InvalidInput("object height and mass must be positive")


@dataclass
class WorldConfig:
    objects: list[WorldObject]
    bin_position: tuple[float, float, float] = (0.6, 0.0, 0.0)
    box_position: tuple[float, float, float] = (0.3, 0.5, 0.05)
    seed: int = 0

    def __post_init__(self):
        if not self.objects:
            raise InvalidInput("the world needs at least one object")
        for p in (self.bin_position, self.box_position):
            if len(p) != 3 or not np.all(np.isfinite(p)):
                raise InvalidInput("bin and box positions must be 3 finite numbers")

    def node_goals(self, index: int) -> dict[str, np.ndarray]:
        """Nominal 4x4 goal of each kitting node while handling object ``index``."""
        obj = self.objects[index]
        p = np.asarray(obj.position, dtype=float)
        box = np.asarray(self.box_position, dtype=float)
        slot = box + np.array([0.05 * (index % 3) - 0.05, 0.05 * (index // 3), 0.0])
        pos = {
            "1": p + [0, 0, PRE_PICK_HEIGHT],
            "2a": p + [0, 0, 0.5 * obj.height],
            "2b": p + [0, 0, PRE_PICK_HEIGHT],
            "3": slot + [0, 0, ABOVE_BOX_HEIGHT],
            "4": slot + [0, 0, 0.5 * obj.height],
        }
        out = {}
        for k, v in pos.items():
            m = np.eye(4)
            m[:3, 3] = v
            out[k] = m
        return out

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "bin_position": list(self.bin_position),
            "box_position": list(self.box_position),
            "objects": [
                {"id": o.id, "position": list(o.position), "height": o.height, "mass": o.mass} for o in self.objects
            ],
        }


def default_world(n_objects: int = 1, seed: int = 0) -> WorldConfig:
    """Up to six objects queued right-to-left in front of the robot."""
    if not 1 <= n_objects <= 6:
        raise InvalidInput("n_objects must lie in [1, 6]")
    rng = np.random.default_rng(seed)
    objs = []
    for i in range(n_objects):
        y = 0.12 - 0.05 * i
        objs.append(WorldObject(
            f"obj{i}", (0.6, round(y, 3), 0.0),
            height=float(np.round(rng.uniform(0.05, 0.15), 3)),
            mass=float(np.round(rng.uniform(0.03, 1.05), 3)),
        ))
    return WorldConfig(objs, seed=seed)


@dataclass
class WorldState:
    holding: bool = False
    placed: list[str] = field(default_factory=list)
