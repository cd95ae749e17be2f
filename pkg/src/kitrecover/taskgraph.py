"""Task graph of milestone nodes plus adaptive branches, and the recovery critic.

The critic maps a classified anomaly at a node to one of three actions:

* :class:`ExecuteAdaptive` when an adaptive branch is registered for the
  ``(node, class)`` pair,
* :class:`RequestAdaptation` once re-enactment has failed twice in a row,
* :class:`ReEnact` otherwise, with the target drawn from a multinomial
  learned from human selection counts.

Node ids are plain strings.  Adaptive nodes get compound ids
``"<parent>/<class>"`` so a second layer reads ``"2a/TC/HC"``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import AlreadyRegistered, GraphError, InvalidInput, MissingPolicy

END = "END"
NOMINAL = "nominal"
ADAPTIVE = "adaptive"


# ---------------------------------------------------------------- goals

@dataclass(frozen=True)
class GoalTransform:
    """Rigid 4x4 transform applied on the right of a parent goal pose."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise InvalidInput("transform must be a finite 4x4 matrix")
        R = m[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise InvalidInput("rotation block must be orthonormal with determinant +1")
        if np.abs(m[3] - [0, 0, 0, 1]).max() > 1e-12:
            raise InvalidInput("last row must be (0, 0, 0, 1)")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "GoalTransform":
        return cls(np.eye(4))

    @classmethod
    def from_parts(cls, translation=(0.0, 0.0, 0.0), rotvec=(0.0, 0.0, 0.0)) -> "GoalTransform":
        m = np.eye(4)
        m[:3, :3] = Rotation.from_rotvec(rotvec).as_matrix()
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def between(cls, parent_goal, child_goal) -> "GoalTransform":
        """Transform ``T`` with ``child_goal = parent_goal @ T``."""
        return cls(np.linalg.inv(as_matrix(parent_goal)) @ as_matrix(child_goal))

    def to_list(self) -> list:
        return self.matrix.tolist()


def as_matrix(pose) -> np.ndarray:
    """Accept a 4x4 matrix or a 7-vector (position, quaternion xyzw)."""
    p = np.asarray(pose, dtype=float)
    if p.shape == (4, 4):
        return p
    if p.shape == (7,):
        m = np.eye(4)
        m[:3, :3] = Rotation.from_quat(p[3:]).as_matrix()
        m[:3, 3] = p[:3]
        return m
    raise InvalidInput("pose must be a 4x4 matrix or a 7-vector")


def as_pose7(matrix) -> np.ndarray:
    m = as_matrix(matrix)
    return np.concatenate([m[:3, 3], Rotation.from_matrix(m[:3, :3]).as_quat()])


def resolve_goal(node: "Node", parent_goal) -> np.ndarray:
    """Goal pose of ``node`` given its parent's goal (4x4)."""
    T = node.goal_transform or GoalTransform.identity()
    return as_matrix(parent_goal) @ T.matrix


# ---------------------------------------------------------------- graph

@dataclass
class Node:
    id: str
    kind: str = NOMINAL
    behavior: int = 0
    skill_ref: str = ""
    introspection_ref: str = ""
    successor: str = END
    parent: str | None = None
    goal_transform: GoalTransform | None = None

    def __post_init__(self):
        if self.kind not in (NOMINAL, ADAPTIVE):
            raise InvalidInput(f"unknown node kind {self.kind!r}")
        if self.kind == ADAPTIVE and (self.goal_transform is None or self.parent is None):
            raise InvalidInput("adaptive nodes need a parent and a goal transform")
        self.skill_ref = self.skill_ref or self.id
        self.introspection_ref = self.introspection_ref or self.id


@dataclass
class ReEnactmentPolicy:
    node: str
    anomaly: str
    counts: dict[str, float]

    def __post_init__(self):
        if any(c < 0 for c in self.counts.values()):
            raise InvalidInput("counts must be non-negative")
        if sum(self.counts.values()) <= 0:
            raise InvalidInput(f"no positive count for ({self.node}, {self.anomaly})")

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(self.counts)

    @property
    def theta(self) -> np.ndarray:
        c = np.array(list(self.counts.values()), dtype=float)
        return c / c.sum()

    def choose(self, rng: np.random.Generator | None = None) -> str:
        """Argmax target (first listed wins ties), or a draw when ``rng`` is given."""
        theta = self.theta
        idx = int(np.argmax(theta)) if rng is None else int(rng.choice(theta.size, p=theta))
        return self.targets[idx]


def registry_key(node: str, anomaly: str) -> str:
    return f"nominal_node_{node}_anomaly_type_{anomaly}"


@dataclass
class AdaptiveRegistry:
    entries: dict[str, str] = field(default_factory=dict)

    def lookup(self, node: str, anomaly: str) -> str | None:
        return self.entries.get(registry_key(node, anomaly))

    def register(self, node: str, anomaly: str, adaptive_id: str) -> None:
        key = registry_key(node, anomaly)
        if key in self.entries:
            raise AlreadyRegistered(key)
        self.entries[key] = adaptive_id

    def __contains__(self, key: str) -> bool:
        return key in self.entries


@dataclass
class TaskGraph:
    nodes: dict[str, Node]
    start: str
    policies: dict[tuple[str, str], ReEnactmentPolicy] = field(default_factory=dict)
    registry: AdaptiveRegistry = field(default_factory=AdaptiveRegistry)

    def __post_init__(self):
        if self.start not in self.nodes:
            raise GraphError(f"start node {self.start!r} missing")

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node {node_id!r}") from None

    def milestones(self) -> list[str]:
        """Nominal chain from the start node, in order."""
        out, cur, seen = [], self.start, set()
        while cur != END:
            if cur in seen:
                raise GraphError("milestone chain contains a cycle")
            seen.add(cur)
            out.append(cur)
            cur = self.node(cur).successor
        return out

    def validate(self) -> None:
        chain = self.milestones()
        for n in self.nodes.values():
            if n.successor != END and n.successor not in self.nodes:
                raise GraphError(f"dangling successor {n.successor!r} of {n.id!r}")
            if n.kind == ADAPTIVE and n.successor not in chain and n.successor != END:
                raise GraphError(f"branch {n.id!r} must rejoin at a milestone")

    def policy(self, node_id: str, anomaly: str) -> ReEnactmentPolicy:
        try:
            return self.policies[(node_id, anomaly)]
        except KeyError:
            raise MissingPolicy(f"no re-enactment policy for ({node_id}, {anomaly})") from None

    def root_goal_node(self, node_id: str) -> str:
        """The nominal ancestor whose goal an adaptive chain is expressed against."""
        n = self.node(node_id)
        while n.kind == ADAPTIVE:
            n = self.node(n.parent)
        return n.id

    # --- persistence ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "kitrecover.taskgraph",
            "version": 1,
            "start": self.start,
            "nodes": [
                {
                    "id": n.id, "kind": n.kind, "behavior": n.behavior,
                    "skill_ref": n.skill_ref, "introspection_ref": n.introspection_ref,
                    "successor": n.successor, "parent": n.parent,
                    "goal_transform": None if n.goal_transform is None else n.goal_transform.to_list(),
                }
                for n in self.nodes.values()
            ],
            "policies": [
                {"node": p.node, "anomaly": p.anomaly, "counts": dict(p.counts)} for p in self.policies.values()
            ],
            "registry": dict(self.registry.entries),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskGraph":
        if d.get("format") != "kitrecover.taskgraph":
            raise InvalidInput("not a task graph record")
        nodes = {}
        for nd in d["nodes"]:
            gt = nd.get("goal_transform")
            nodes[nd["id"]] = Node(
                nd["id"], nd["kind"], nd["behavior"], nd["skill_ref"], nd["introspection_ref"],
                nd["successor"], nd.get("parent"), None if gt is None else GoalTransform(np.asarray(gt)),
            )
        policies = {
            (p["node"], p["anomaly"]): ReEnactmentPolicy(p["node"], p["anomaly"], dict(p["counts"]))
            for p in d["policies"]
        }
        return cls(nodes, d["start"], policies, AdaptiveRegistry(dict(d["registry"])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TaskGraph":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------- policies

# Human selections of re-enactment targets, keyed by behavior:
# (anomaly, source behavior) -> {target behavior: count}.
KITTING_SELECTIONS: dict[tuple[str, int], dict[int, int]] = {
    ("HC", 1): {1: 25},
    ("HC", 2): {2: 30},
    ("HC", 3): {3: 25},
    ("HC", 4): {4: 25},
    ("TC", 2): {1: 25},
    ("TC", 3): {3: 5},
    ("OS", 2): {2: 20, 1: 5},
    ("OS", 3): {2: 25},
    ("NO", 2): {2: 24, 1: 1},
}

# Kitting chain: move-to-pick, pre-pick-to-pick, pick-to-pre-pick, move-to-box, place.
KITTING_NODES = (("1", 1), ("2a", 2), ("2b", 2), ("3", 3), ("4", 4))


def learn_reenactment(
    counts_table: Mapping[tuple[str, str], Mapping[str, float]]
) -> dict[tuple[str, str], ReEnactmentPolicy]:
    """``{(node, class): {target: count}}`` -> normalized policies."""
    return {
        (node, anomaly): ReEnactmentPolicy(node, anomaly, {str(k): float(v) for k, v in counts.items()})
        for (node, anomaly), counts in counts_table.items()
    }


def expand_behavior_counts(
    selections: Mapping[tuple[str, int], Mapping[int, float]], nodes: Iterable[tuple[str, int]]
) -> dict[tuple[str, str], dict[str, float]]:
    """Map behavior-level counts onto nodes.

    Every node of a source behavior gets the behavior's counts; a target
    behavior is entered through its first node.
    """
    nodes = list(nodes)
    first = {}
    for nid, beh in nodes:
        first.setdefault(beh, nid)
    out = {}
    for (anomaly, beh), counts in selections.items():
        mapped = {first[tb]: float(c) for tb, c in counts.items()}
        for nid, nb in nodes:
            if nb == beh:
                out[(nid, anomaly)] = dict(mapped)
    return out


def build_kitting_graph(selections=None) -> TaskGraph:
    """Five-node kitting chain ``1 -> 2a -> 2b -> 3 -> 4`` with learned policies."""
    nodes = {}
    ids = [nid for nid, _ in KITTING_NODES]
    for i, (nid, beh) in enumerate(KITTING_NODES):
        succ = ids[i + 1] if i + 1 < len(ids) else END
        nodes[nid] = Node(nid, NOMINAL, beh, successor=succ)
    sel = KITTING_SELECTIONS if selections is None else selections
    policies = learn_reenactment(expand_behavior_counts(sel, KITTING_NODES))
    return TaskGraph(nodes, ids[0], policies)


# ---------------------------------------------------------------- critic

@dataclass(frozen=True)
class ReEnact:
    target: str


@dataclass(frozen=True)
class ExecuteAdaptive:
    node_id: str


@dataclass(frozen=True)
class RequestAdaptation:
    node: str
    anomaly: str


RecoveryAction = ReEnact | ExecuteAdaptive | RequestAdaptation


@dataclass
class CriticState:
    counters: dict[tuple[str, str], int] = field(default_factory=dict)
    last_action: RecoveryAction | None = None

    def node_completed(self, node_id: str) -> None:
        """Nominal progress past ``node_id`` clears its failure counters."""
        for key in [k for k in self.counters if k[0] == node_id]:
            del self.counters[key]


def decide(
    critic: CriticState,
    graph: TaskGraph,
    node_id: str,
    anomaly: str,
    rng_seed: int | None = None,
    sample: bool = False,
) -> RecoveryAction:
    """Choose the recovery action for ``anomaly`` flagged at ``node_id``.

    The consecutive-occurrence counter is bumped on every call, so the third
    occurrence without intervening progress past the node escalates.
    """
    key = (node_id, anomaly)
    adaptive = graph.registry.lookup(node_id, anomaly)
    if adaptive is not None:
        action: RecoveryAction = ExecuteAdaptive(adaptive)
    elif critic.counters.get(key, 0) >= 2:
        action = RequestAdaptation(node_id, anomaly)
    else:
        pol = graph.policy(node_id, anomaly)
        rng = np.random.default_rng(rng_seed) if sample else None
        action = ReEnact(pol.choose(rng))
    critic.counters[key] = critic.counters.get(key, 0) + 1
    critic.last_action = action
    return action


def ensuing_milestone(graph: TaskGraph, node_id: str) -> str:
    """First milestone after the behavior that ``node_id`` belongs to."""
    root = graph.node(graph.root_goal_node(node_id))
    cur = root.successor
    while cur != END and graph.node(cur).behavior == root.behavior:
        cur = graph.node(cur).successor
    return cur


def insert_adaptive(
    graph: TaskGraph,
    parent: str,
    anomaly: str,
    transform: GoalTransform,
    skill_ref: str | None = None,
) -> str:
    """Add a branch node for ``(parent, anomaly)`` and register it.

    The branch rejoins at the ensuing milestone and copies every
    re-enactment policy of its parent.
    """
    p = graph.node(parent)
    if graph.registry.lookup(parent, anomaly) is not None:
        raise AlreadyRegistered(registry_key(parent, anomaly))
    new_id = f"{parent}/{anomaly}"
    if new_id in graph.nodes:
        raise AlreadyRegistered(new_id)
    node = Node(
        new_id, ADAPTIVE, p.behavior, skill_ref or new_id, new_id,
        ensuing_milestone(graph, parent), parent, transform,
    )
    graph.nodes[new_id] = node
    for (nid, cls), pol in list(graph.policies.items()):
        if nid == parent:
            graph.policies[(new_id, cls)] = ReEnactmentPolicy(new_id, cls, dict(pol.counts))
    graph.registry.register(parent, anomaly, new_id)
    return new_id


def next_node(graph: TaskGraph, node_id: str, outcome: str = "success") -> str:
    """Successor after a nominal completion; ``END`` past the terminal node."""
    n = graph.node(node_id)
    if outcome != "success":
        raise InvalidInput("only nominal completions advance the graph; recovery uses decide()")
    if n.successor != END and n.successor not in graph.nodes:
        raise GraphError(f"dangling successor {n.successor!r} of {node_id!r}")
    return n.successor
