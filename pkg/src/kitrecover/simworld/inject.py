"""Class-specific anomaly signatures applied to raw trials.

Signatures (all scaled by ``magnitude``, active from ``onset`` for
``duration`` seconds, or to the end of the trial when ``duration`` is None):

* HC: short half-sine force/torque spike in a random direction.
* TC: sustained upward force step with the linear velocity damped.
* OS: tactile contact lost (pad noise collapses) and the held weight leaves
  the force reading.
* NO: the pads never register contact, and the empty gripper closing
  leaves a brief angular-velocity/torque transient.
* WC: sustained lateral force ramping in over 0.2 s.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from ..errors import InvalidInput
from ..signals import N_TAXELS, Trial
from .generator import TAXEL_BASELINE, TAXEL_NOISE

ANOMALY_CLASSES = ("HC", "TC", "OS", "NO", "WC")
GRAVITY = 9.81

# default (duration s, magnitude) per class; None duration lasts to the end
DEFAULTS = {
    "HC": (0.3, 12.0),
    "TC": (None, 6.0),
    "OS": (None, 0.5),
    "NO": (None, 1.0),
    "WC": (None, 6.0),
}


@dataclass(frozen=True)
class AnomalyInjector:
    """One scripted anomaly.

    ``node`` is the node whose execution carries the anomaly; ``onset`` is
    measured from the start of that execution.  ``persistent`` injectors fire
    on every execution of the node; otherwise only on execution number
    ``occurrence`` (1-based).  ``signature`` lets the sensor signature differ
    from the ground-truth ``cls`` (used to force a misclassification).
    """

    cls: str
    node: str
    onset: float
    duration: float | None = None
    magnitude: float | None = None
    persistent: bool = False
    occurrence: int = 1
    obj: int = 0
    signature: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.cls not in ANOMALY_CLASSES:
            raise InvalidInput(f"unknown anomaly class {self.cls!r}")
        if self.signature is not None and self.signature not in ANOMALY_CLASSES:
            raise InvalidInput(f"unknown signature class {self.signature!r}")
        if self.onset < 0:
            raise InvalidInput("onset must be >= 0")
        if self.magnitude is not None and self.magnitude < 0:
            raise InvalidInput("magnitude must be >= 0")
        if self.duration is not None and self.duration <= 0:
            raise InvalidInput("duration must be positive")
        if self.occurrence < 1:
            raise InvalidInput("occurrence is 1-based")

    @property
    def shape(self) -> str:
        return self.signature or self.cls

    @property
    def eff_duration(self) -> float | None:
        return DEFAULTS[self.shape][0] if self.duration is None and self.shape == "HC" else self.duration

    @property
    def eff_magnitude(self) -> float:
        return DEFAULTS[self.shape][1] if self.magnitude is None else self.magnitude

    def fires_on(self, execution: int) -> bool:
        return execution == self.occurrence or (self.persistent and execution >= self.occurrence)


def _span(trial: Trial, onset: float, duration: float | None) -> tuple[int, int]:
    t = trial.t - trial.t[0]
    if onset > t[-1] + 1e-9:
        raise InvalidInput(f"onset {onset} s lies beyond the trial ({t[-1]:.3f} s)")
    i0 = int(np.searchsorted(t, onset - 1e-9))
    i1 = len(t) if duration is None else int(np.searchsorted(t, onset + duration - 1e-9))
    return i0, max(i1, i0 + 1)


def _direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def inject(trial: Trial, injector: AnomalyInjector) -> Trial:
    """Return a perturbed copy of ``trial``; the input is left untouched."""
    i0, i1 = _span(trial, injector.onset, injector.eff_duration)
    mag = injector.eff_magnitude
    out = replace(
        trial,
        wrench=trial.wrench.copy(),
        twist=trial.twist.copy(),
        pose=trial.pose.copy(),
        taxels_left=trial.taxels_left.copy(),
        taxels_right=trial.taxels_right.copy(),
    )
    if mag == 0:
        return out
    n = i1 - i0
    rng = np.random.default_rng(zlib.crc32(f"inject|{injector.cls}|{injector.node}|{injector.seed}".encode()))
    rate = trial.rate_hz or 1.0 / np.median(np.diff(trial.t))
    shape = injector.shape
    if shape == "HC":
        pulse = np.sin(np.pi * (np.arange(n) + 0.5) / n)
        d = _direction(rng)
        d[2] = -abs(d[2])  # pushes tend to load the arm downward
        out.wrench[i0:i1, :3] += mag * pulse[:, None] * d
        out.wrench[i0:i1, 3:] += 0.1 * mag * pulse[:, None] * _direction(rng)
    elif shape == "TC":
        ramp = np.minimum(1.0, (np.arange(n) + 1) / (0.1 * rate))
        out.wrench[i0:i1, 2] += mag * ramp
        out.wrench[i0:i1, 3:5] += 0.05 * mag * ramp[:, None] * rng.choice([-1.0, 1.0], size=2)
        out.twist[i0:i1, :3] *= (1.0 - 0.9 * ramp)[:, None]
    elif shape in ("OS", "NO"):
        pads = (out.taxels_left, out.taxels_right)
        for pad in pads:
            pad[i0:i1] = TAXEL_BASELINE + TAXEL_NOISE * rng.standard_normal((n, N_TAXELS))
        if shape == "OS":
            out.wrench[i0:i1, 2] += mag * GRAVITY
        else:
            m = min(n, int(0.4 * rate))
            k = np.arange(m)
            osc = mag * np.exp(-k / (0.1 * rate)) * np.sin(2 * np.pi * 4.0 * k / rate)
            out.twist[i0 : i0 + m, 3:] += osc[:, None] * np.array([1.0, -0.5, 0.3])
            out.wrench[i0 : i0 + m, 3:] += 0.3 * osc[:, None] * np.array([0.5, 1.0, -0.2])
    elif shape == "WC":
        ramp = np.minimum(1.0, (np.arange(n) + 1) / (0.2 * rate))
        lateral = np.array([0.0, 1.0, 0.0])
        out.wrench[i0:i1, :3] += mag * ramp[:, None] * lateral
        out.wrench[i0:i1, 3] += 0.1 * mag * ramp
    return out


def injected_span(trial: Trial, injector: AnomalyInjector) -> tuple[float, float]:
    """Ground-truth event interval ``(start, end)`` in trial time."""
    i0, i1 = _span(trial, injector.onset, injector.eff_duration)
    return float(trial.t[i0]), float(trial.t[i1 - 1])
