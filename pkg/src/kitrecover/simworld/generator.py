"""Ground-truth skill dynamics and nominal stream generation.

Each skill owns a piecewise affine VAR(1) over the 12 wrench/twist channels
``[F(3), tau(3), v(3), w(3)]``::

    x_t = c_k + A_k (x_{t-1} - c_k) + sigma * eps_t,    eps_t ~ N(0, I)

with 2-4 segments.  Tactile pads follow a per-segment contact level and the
pose channel follows a DMP rollout toward the skill's goal.  Everything is
seeded; the same ``(skill_id, seed)`` pair always yields the same trial.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import special_ortho_group

from ..dmp import DmpModel, Demonstration, learn_from_demo, minimum_jerk, rollout
from ..errors import InvalidInput
from ..signals import CANONICAL_RATE, N_TAXELS, Trial

N_CHANNELS = 12
# innovation scale per channel group: force N, torque Nm, linear m/s, angular rad/s
CHANNEL_NOISE = np.repeat([0.25, 0.03, 0.01, 0.02], 3)
CHANNEL_SPREAD = np.repeat([2.0, 0.25, 0.08, 0.15], 3)
TAXEL_BASELINE = 0.2
TAXEL_NOISE = 0.004
TAXEL_CONTACT_NOISE = 0.04
HOLD_IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass
class SkillDynamics:
    skill_id: str
    duration: float
    breaks: np.ndarray  # segment start fractions, first entry 0
    centers: np.ndarray  # (n_seg, 12)
    A: np.ndarray  # (n_seg, 12, 12)
    noise: np.ndarray  # (12,)
    contact: np.ndarray  # (n_seg,) in [0, 1]
    start: np.ndarray  # (3,) nominal start position
    goal: np.ndarray  # (3,) nominal goal position
    taxel_profile: np.ndarray = field(default=None)  # (2 * N_TAXELS,)

    @property
    def n_segments(self) -> int:
        return self.centers.shape[0]

    def segment_index(self, n: int) -> np.ndarray:
        """Segment label of each of ``n`` evenly spaced samples."""
        frac = np.arange(n) / max(n - 1, 1)
        return np.searchsorted(self.breaks, frac, side="right") - 1


def _stable_seed(*parts) -> int:
    return zlib.crc32("|".join(map(str, parts)).encode("utf-8"))


def _stable_A(rng: np.random.Generator, d: int) -> np.ndarray:
    Q = special_ortho_group.rvs(d, random_state=rng)
    lam = rng.uniform(0.55, 0.9, size=d)
    return Q @ np.diag(lam) @ Q.T


# nominal duration (s), contact pattern and motion of the kitting skills
_KITTING = {
    "1": (3.0, "free", (0.6, -0.3, 0.4), (0.6, 0.0, 0.15)),
    "2a": (2.0, "grasp", (0.6, 0.0, 0.15), (0.6, 0.0, 0.03)),
    "2b": (2.0, "hold", (0.6, 0.0, 0.03), (0.6, 0.0, 0.15)),
    "3": (3.0, "hold", (0.6, 0.0, 0.15), (0.3, 0.5, 0.2)),
    "4": (2.0, "release", (0.3, 0.5, 0.2), (0.3, 0.5, 0.08)),
}


def make_dynamics(
    skill_id: str,
    duration: float = 2.0,
    contact_pattern: str = "free",
    start=(0.5, 0.0, 0.3),
    goal=(0.5, 0.0, 0.1),
    seed: int = 0,
) -> SkillDynamics:
    """Draw a random but reproducible piecewise-VAR skill."""
    rng = np.random.default_rng(_stable_seed("skill", skill_id, seed))
    n_seg = int(rng.integers(2, 5))
    # jittered even split keeps every segment at least half its share long
    inner = (np.arange(1, n_seg) + rng.uniform(-0.25, 0.25, size=n_seg - 1)) / n_seg
    breaks = np.concatenate([[0.0], inner])
    centers = rng.normal(0.0, 1.0, size=(n_seg, N_CHANNELS)) * CHANNEL_SPREAD
    A = np.stack([_stable_A(rng, N_CHANNELS) for _ in range(n_seg)])
    if contact_pattern == "free":
        contact = np.zeros(n_seg)
    elif contact_pattern == "hold":
        contact = np.ones(n_seg)
    elif contact_pattern == "grasp":
        contact = np.zeros(n_seg)
        contact[-1] = 1.0
    elif contact_pattern == "release":
        contact = np.ones(n_seg)
        contact[-1] = 0.0
    else:
        raise InvalidInput(f"unknown contact pattern {contact_pattern!r}")
    profile = rng.uniform(0.3, 1.0, size=2 * N_TAXELS)
    return SkillDynamics(
        skill_id, float(duration), breaks, centers, A, CHANNEL_NOISE.copy(), contact,
        np.asarray(start, dtype=float), np.asarray(goal, dtype=float), profile,
    )


class SkillRegistry:
    """Known skills and their (cached) motion primitives."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._skills: dict[str, SkillDynamics] = {}
        self._dmps: dict[str, DmpModel] = {}

    @classmethod
    def kitting(cls, seed: int = 0) -> "SkillRegistry":
        reg = cls(seed)
        for sid, (dur, pattern, start, goal) in _KITTING.items():
            reg.add(make_dynamics(sid, dur, pattern, start, goal, seed))
        return reg

    def add(self, dyn: SkillDynamics) -> None:
        self._skills[dyn.skill_id] = dyn

    def register_adaptive(self, skill_id: str, parent_id: str, goal) -> SkillDynamics:
        """New skill with its own dynamics, same duration and contact as its parent."""
        parent = self.get(parent_id)
        dyn = make_dynamics(skill_id, parent.duration, "free", parent.start, np.asarray(goal)[:3], self.seed)
        # the branch replaces the rest of the parent behavior: it ends holding the object
        dyn.contact = np.zeros(dyn.n_segments)
        dyn.contact[-1] = 1.0
        if parent.contact.min() > 0:
            dyn.contact[:] = 1.0
        self.add(dyn)
        return dyn

    def set_dmp(self, skill_id: str, model: DmpModel) -> None:
        self._dmps[skill_id] = model

    def __contains__(self, skill_id: str) -> bool:
        return skill_id in self._skills

    def get(self, skill_id: str) -> SkillDynamics:
        try:
            return self._skills[skill_id]
        except KeyError:
            raise InvalidInput(f"unknown skill {skill_id!r}") from None

    def dmp(self, skill_id: str) -> DmpModel:
        """Primitive learned from a minimum-jerk demonstration of the skill."""
        if skill_id not in self._dmps:
            dyn = self.get(skill_id)
            dt = 1.0 / CANONICAL_RATE
            demo = Demonstration.from_positions(minimum_jerk(dyn.start, dyn.goal, dyn.duration, dt), dt)
            self._dmps[skill_id] = learn_from_demo(demo, n_basis=20)
        return self._dmps[skill_id]

    @property
    def skill_ids(self) -> tuple[str, ...]:
        return tuple(self._skills)


def simulate_var(dyn: SkillDynamics, n: int, rng: np.random.Generator, noise_scale: float = 1.0) -> np.ndarray:
    seg = dyn.segment_index(n)
    X = np.empty((n, N_CHANNELS))
    x = dyn.centers[0].copy()
    eps = rng.standard_normal((n, N_CHANNELS)) * (dyn.noise * noise_scale)
    for t in range(n):
        k = seg[t]
        c = dyn.centers[k]
        x = c + dyn.A[k] @ (x - c) + eps[t]
        X[t] = x
    return X


def generate_nominal(
    skill_id: str,
    seed: int,
    duration: float | None = None,
    noise_scale: float = 1.0,
    registry: SkillRegistry | None = None,
    x0=None,
    goal=None,
    rate: float = CANONICAL_RATE,
) -> Trial:
    """Nominal multimodal trial of ``skill_id``.

    ``x0``/``goal`` re-target the pose channel (positions, m); the force and
    tactile channels do not depend on them.
    """
    reg = registry if registry is not None else _default_registry()
    dyn = reg.get(skill_id)
    duration = dyn.duration if duration is None else float(duration)
    if duration <= 0:
        raise InvalidInput("duration must be positive")
    n = int(round(duration * rate)) + 1
    rng = np.random.default_rng(_stable_seed("nominal", skill_id, seed))
    wt = simulate_var(dyn, n, rng, noise_scale)
    seg = dyn.segment_index(n)
    contact = dyn.contact[seg]
    taxels = (
        TAXEL_BASELINE
        + contact[:, None] * dyn.taxel_profile[None, :]
        + rng.standard_normal((n, 2 * N_TAXELS)) * noise_scale
        * (TAXEL_NOISE + TAXEL_CONTACT_NOISE * contact[:, None])
    )
    x0 = dyn.start if x0 is None else np.asarray(x0, dtype=float)[:3]
    goal = dyn.goal if goal is None else np.asarray(goal, dtype=float)[:3]
    roll = rollout(reg.dmp(skill_id), x0, goal, tau=duration, dt=1.0 / rate, t_max=duration)
    pos = roll.x[np.minimum(np.arange(n), roll.x.shape[0] - 1)]
    pose = np.hstack([pos, np.tile(HOLD_IDENTITY, (n, 1))])
    t = np.arange(n) / rate
    return Trial(
        skill_id, t, wt[:, :6], wt[:, 6:], pose, taxels[:, :N_TAXELS], taxels[:, N_TAXELS:], rate_hz=rate
    )


_DEFAULT: SkillRegistry | None = None


def _default_registry() -> SkillRegistry:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = SkillRegistry.kitting()
    return _DEFAULT
