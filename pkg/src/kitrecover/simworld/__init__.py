"""Synthetic kitting world: skill streams, anomaly injection and episodes."""
from .episode import ExecutionTrace, GroundTruthEvent, run_episode, write_run
from .generator import SkillDynamics, SkillRegistry, generate_nominal, make_dynamics
from .inject import ANOMALY_CLASSES, AnomalyInjector, inject, injected_span
from .models import ModelBank
from .scenario import Scenario
from .world import WorldConfig, WorldObject, default_world

__all__ = [
    "ANOMALY_CLASSES",
    "AnomalyInjector",
    "ExecutionTrace",
    "GroundTruthEvent",
    "ModelBank",
    "Scenario",
    "SkillDynamics",
    "SkillRegistry",
    "WorldConfig",
    "WorldObject",
    "default_world",
    "generate_nominal",
    "inject",
    "injected_span",
    "make_dynamics",
    "run_episode",
    "write_run",
]
