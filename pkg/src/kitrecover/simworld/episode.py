"""Sense-plan-act-introspect episodes over the kitting task graph.

One tick is one feature sample at 50 Hz.  Each node execution generates the
node's nominal stream toward its goal, applies the injectors scheduled for
that execution, and streams the features through the node's detector.  On a
flag the system gathers the post-flag window, labels it (ground truth in the
perfect modality, the classifier otherwise), asks the critic for an action
and acts on it.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from ..errors import InvalidInput, MissingPolicy
from ..introspect import Detector, classify
from ..signals import CANONICAL_RATE, FEATURE_NAMES, extract_features, write_features
from ..taskgraph import (
    END,
    CriticState,
    ExecuteAdaptive,
    ReEnact,
    TaskGraph,
    decide,
    next_node,
)
from .generator import generate_nominal
from .inject import AnomalyInjector, inject, injected_span
from .models import ModelBank
from .scenario import Scenario
from .world import WorldState

RATE = CANONICAL_RATE
CONSEQUENCE_ONSET = 0.3  # s into a node that needs an object it does not hold


def _seed(*parts) -> int:
    return zlib.crc32("|".join(map(str, parts)).encode("utf-8"))


@dataclass
class GroundTruthEvent:
    t_start: float
    t_end: float
    cls: str
    node: str
    obj: int
    scripted: bool


@dataclass
class ExecutionTrace:
    scenario_name: str = ""
    modality: str = "perfect"
    t: list[float] = field(default_factory=list)
    node: list[str] = field(default_factory=list)
    features: list[np.ndarray] = field(default_factory=list)
    grad: list[float] = field(default_factory=list)
    flag: list[bool] = field(default_factory=list)
    flags: list[tuple[float, str, float]] = field(default_factory=list)
    labels: list[tuple[float, str, str, str | None]] = field(default_factory=list)  # t, node, label, truth
    actions: list[tuple[float, str, str]] = field(default_factory=list)
    events: list[GroundTruthEvent] = field(default_factory=list)
    adaptations: list[str] = field(default_factory=list)
    outcome: str | None = None
    reason: str = ""

    def finish(self, outcome: str, reason: str = "") -> None:
        if self.outcome is not None:
            raise RuntimeError("trace outcome already set")
        self.outcome, self.reason = outcome, reason

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    @property
    def final_node(self) -> str | None:
        return self.node[-1] if self.node else None

    @property
    def misclassified(self) -> list[tuple[float, str, str, str | None]]:
        return [lab for lab in self.labels if lab[3] is not None and lab[2] != lab[3]]

    def counters(self) -> dict:
        return {
            "ticks": len(self.t),
            "flags": len(self.flags),
            "labels": len(self.labels),
            "misclassified": len(self.misclassified),
            "reenactments": sum(a[2].startswith("ReEnact") for a in self.actions),
            "adaptive_runs": sum(a[2].startswith("ExecuteAdaptive") for a in self.actions),
            "adaptations": len(self.adaptations),
            "events": len(self.events),
        }

    def summary(self) -> dict:
        return {
            "scenario": self.scenario_name,
            "modality": self.modality,
            "outcome": self.outcome,
            "reason": self.reason,
            "final_node": self.final_node,
            "counters": self.counters(),
            "adaptations": list(self.adaptations),
            "flags": [{"t": round(t, 6), "node": n, "gradient": g} for t, n, g in self.flags],
            "labels": [{"t": round(t, 6), "node": n, "label": lab, "truth": tr} for t, n, lab, tr in self.labels],
            "actions": [{"t": round(t, 6), "node": n, "action": a} for t, n, a in self.actions],
            "events": [e.__dict__ for e in self.events],
        }


def _action_str(action) -> str:
    if isinstance(action, ReEnact):
        return f"ReEnact({action.target})"
    if isinstance(action, ExecuteAdaptive):
        return f"ExecuteAdaptive({action.node_id})"
    return f"RequestAdaptation({action.node},{action.anomaly})"


def _goal(graph: TaskGraph, node_id: str, nominal_goals: dict[str, np.ndarray]) -> np.ndarray:
    node = graph.node(node_id)
    if node.goal_transform is None:
        return nominal_goals[node_id]
    return _goal(graph, node.parent, nominal_goals) @ node.goal_transform.matrix


def nominal_ticks(graph: TaskGraph, bank: ModelBank) -> int:
    return sum(int(round(bank.registry.get(graph.node(n).skill_ref).duration * RATE)) + 1 for n in graph.milestones())


def run_episode(graph: TaskGraph, models: ModelBank, scenario: Scenario) -> ExecutionTrace:
    """Execute every object of the scenario through ``graph``.

    ``graph`` is updated in place when adaptations are taught.  Failures
    (missing policy, missing demonstration, exhausted budget) end the episode
    and are recorded in the trace rather than raised.
    """
    trace = ExecutionTrace(scenario.name, scenario.modality)
    critic = CriticState()
    world = WorldState()
    budget = int(scenario.budget_factor * nominal_ticks(graph, models) * len(scenario.world.objects))
    pre_s = post_s = 2.0
    if models.classifier is not None:
        pre_s, post_s = models.classifier.pre_window, models.classifier.post_window
    elif scenario.modality == "imperfect":
        raise InvalidInput("imperfect modality needs a trained classifier")
    clock = 0
    executions: dict[tuple[int, str], int] = {}
    ee = scenario.world.node_goals(0)["1"][:3, 3] + np.array([0.0, -0.3, 0.25])
    try:
        for j in range(len(scenario.world.objects)):
            goals = scenario.world.node_goals(j)
            world.holding = False
            node_id = graph.start
            while node_id != END:
                if clock >= budget:
                    trace.finish("failure", "budget exhausted")
                    return trace
                node = graph.node(node_id)
                n_exec = executions.get((j, node_id), 0) + 1
                executions[(j, node_id)] = n_exec
                dyn = models.registry.get(node.skill_ref)
                goal = _goal(graph, node_id, goals)
                trial = generate_nominal(
                    node.skill_ref, _seed("exec", scenario.seed, j, node_id, n_exec, clock),
                    registry=models.registry, x0=ee, goal=goal[:3, 3],
                )
                active = [
                    inj for inj in scenario.injectors
                    if inj.obj == j and inj.node == node_id and inj.fires_on(n_exec) and inj.onset < trial.t[-1]
                ]
                if dyn.contact[0] > 0 and not world.holding:
                    # the node expects a held object: the empty grip reads as a slip
                    active.append(AnomalyInjector("OS", node_id, CONSEQUENCE_ONSET, obj=j, seed=n_exec))
                t0 = clock / RATE
                for inj in active:
                    trial = inject(trial, inj)
                    a, b = injected_span(trial, inj)
                    trace.events.append(GroundTruthEvent(t0 + a, t0 + b, inj.cls, node_id, j, inj in scenario.injectors))
                feats = extract_features(trial)
                det = Detector(models.id_model(node_id), RATE, t0=t0)
                n = feats.shape[0]
                handled = None
                stop = n
                i = 0
                while i < n:
                    t_i = (clock + i) / RATE
                    flag = det.step(feats[i], t_i)
                    trace.t.append(t_i)
                    trace.node.append(node_id)
                    trace.features.append(feats[i])
                    trace.grad.append(float(det.last_gradient))
                    trace.flag.append(flag is not None)
                    if flag is not None:
                        trace.flags.append((flag.t, node_id, flag.gradient_at_trigger))
                        truth = active[0].cls if active else None
                        hi = min(n, i + int(round(post_s * RATE)) + 1)
                        for k in range(i + 1, hi):
                            g = det.filter.update(feats[k])
                            trace.t.append((clock + k) / RATE)
                            trace.node.append(node_id)
                            trace.features.append(feats[k])
                            trace.grad.append(float(g))
                            trace.flag.append(False)
                        window = feats[max(0, i - int(round(pre_s * RATE))):hi]
                        if scenario.modality == "perfect":
                            label = truth
                        else:
                            label = classify(models.classifier, window).label if window.shape[0] >= 2 else None
                        if label is not None:
                            trace.labels.append((flag.t, node_id, label, truth))
                            handled = label
                            stop = hi
                            break
                        i = hi
                        continue
                    i += 1
                clock += stop
                ee = trial.pose[stop - 1, :3]
                truth_classes = {inj.cls for inj in active}
                if handled is None:
                    # nominal completion, possibly with an unnoticed anomaly
                    if dyn.contact[-1] > 0:
                        world.holding = not (truth_classes & {"OS", "NO", "TC"})
                    elif dyn.contact[0] > 0 and world.holding:
                        world.holding = False
                        world.placed.append(scenario.world.objects[j].id)
                    elif truth_classes & {"OS"}:
                        world.holding = False
                    critic.node_completed(node_id)
                    node_id = next_node(graph, node_id)
                    continue
                if truth_classes & {"OS", "NO"}:
                    world.holding = False
                action = decide(critic, graph, node_id, handled, rng_seed=_seed(scenario.seed, clock))
                trace.actions.append((clock / RATE, node_id, _action_str(action)))
                if isinstance(action, ReEnact):
                    node_id = action.target
                elif isinstance(action, ExecuteAdaptive):
                    node_id = action.node_id
                else:
                    key = (action.node, action.anomaly)
                    if key not in scenario.demonstrations:
                        trace.finish("failure", f"no demonstration for adaptation {key}")
                        return trace
                    parent_goal = _goal(graph, action.node, goals)
                    demo_goal = parent_goal @ scenario.demonstrations[key].matrix
                    new_id = models.adapt(graph, action.node, action.anomaly, demo_goal, parent_goal, ee)
                    trace.adaptations.append(new_id)
                    node_id = new_id
            if scenario.world.objects[j].id not in world.placed:
                trace.finish("failure", f"object {scenario.world.objects[j].id} not placed")
                return trace
    except MissingPolicy as exc:
        trace.finish("failure", f"missing policy: {exc}")
        return trace
    trace.finish("success")
    return trace


def run_dir_name(stamp: datetime | None = None) -> str:
    stamp = stamp or datetime.now()
    return f"experiment_at_{stamp.strftime('%Y-%m-%d_%H-%M-%S')}"


def write_run(trace: ExecutionTrace, out_dir, stamp: datetime | None = None, extra: dict | None = None) -> Path:
    """Write ``experiment_at_[time]/`` with the trial file, label list, flag log and summary."""
    run = Path(out_dir) / run_dir_name(stamp)
    run.mkdir(parents=True, exist_ok=False)
    feats = np.asarray(trace.features) if trace.features else np.zeros((0, len(FEATURE_NAMES)))
    write_features(run / "trial.csv", np.asarray(trace.t), feats)
    (run / "anomaly_labels.txt").write_text("".join(f"{lab[2]}\n" for lab in trace.labels), encoding="utf-8")
    (run / "anomaly_flags.txt").write_text(
        "".join(f"{t:.6f} {node} {g:.6f}\n" for t, node, g in trace.flags), encoding="utf-8"
    )
    with open(run / "trace.csv", "w", encoding="utf-8") as fh:
        fh.write("t,node,grad,flag\n")
        for t, node, g, f in zip(trace.t, trace.node, trace.grad, trace.flag):
            fh.write(f"{t!r},{node},{g!r},{int(f)}\n")
    body = trace.summary()
    if extra:
        body.update(extra)
    (run / "summary.json").write_text(json.dumps(body, indent=1, sort_keys=True), encoding="utf-8")
    return run
