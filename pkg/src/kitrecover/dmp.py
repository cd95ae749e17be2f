"""Discrete dynamic movement primitives, one independent DMP per dimension.

Transformation system (per dimension)::

    tau * dv/dt = K (g - x) - D v - K (g - x0) s + K a f(s)
    tau * dx/dt = v
    tau * ds/dt = -alpha s

with ``f(s) = sum_i w_i psi_i(s) s / sum_i psi_i(s)`` and
``psi_i(s) = exp(-h_i (s - c_i)^2)``.  ``a = g - x0`` scales the learned
shape to new start/goal pairs; demos whose start equals their goal are fit
with ``a = 1`` instead (the ``amplitude_scaled`` flag records which).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, InvalidInput, NumericalError

DEFAULT_K = 100.0
DEFAULT_DT = 1.0 / 50.0
FINAL_PHASE = 0.01
_AMP_EPS = 1e-9


@dataclass
class Demonstration:
    x: np.ndarray
    xd: np.ndarray
    xdd: np.ndarray
    T: float

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float).T).T
        self.xd = np.atleast_2d(np.asarray(self.xd, dtype=float).T).T
        self.xdd = np.atleast_2d(np.asarray(self.xdd, dtype=float).T).T
        if not (self.x.shape == self.xd.shape == self.xdd.shape):
            raise InvalidInput("positions, velocities and accelerations must have equal shapes")
        if self.T <= 0:
            raise InvalidInput("demonstration duration must be positive")

    @classmethod
    def from_positions(cls, x, dt: float) -> "Demonstration":
        x = np.atleast_2d(np.asarray(x, dtype=float).T).T
        if x.shape[0] < 2:
            raise FitError("demonstration needs at least two samples")
        xd = np.gradient(x, dt, axis=0)
        xdd = np.gradient(xd, dt, axis=0)
        return cls(x, xd, xdd, dt * (x.shape[0] - 1))

    @property
    def n_dims(self) -> int:
        return self.x.shape[1]


@dataclass
class DmpModel:
    K: float
    D: float
    alpha: float
    weights: np.ndarray  # (n_dims, n_basis)
    centers: np.ndarray
    widths: np.ndarray
    x0: np.ndarray
    g: np.ndarray
    tau: float
    amplitude_scaled: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(np.atleast_2d(np.asarray(self.weights, dtype=float)))
        self.centers = np.asarray(self.centers, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if self.amplitude_scaled is None:
            self.amplitude_scaled = np.ones(self.x0.shape, dtype=bool)
        self.amplitude_scaled = np.atleast_1d(np.asarray(self.amplitude_scaled, dtype=bool))
        if self.K <= 0 or self.D <= 0 or self.alpha <= 0:
            raise InvalidInput("K, D and alpha must be positive")
        if self.centers.size < 2:
            raise InvalidInput("need at least two basis functions")
        if np.any(np.diff(self.centers) >= 0):
            raise InvalidInput("basis centers must be strictly decreasing in phase")

    @property
    def n_basis(self) -> int:
        return self.centers.size

    @property
    def n_dims(self) -> int:
        return self.x0.size

    def forcing(self, s) -> np.ndarray:
        """Forcing term ``f(s)`` for every dimension; shape ``(len(s), n_dims)``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return basis_features(s, self.centers, self.widths) @ self.weights.T

    def to_dict(self) -> dict:
        return {
            "kind": "dmp",
            "version": 1,
            "K": self.K,
            "D": self.D,
            "alpha": self.alpha,
            "tau": self.tau,
            "x0": self.x0.tolist(),
            "g": self.g.tolist(),
            "centers": self.centers.tolist(),
            "widths": self.widths.tolist(),
            "weights": self.weights.tolist(),
            "amplitude_scaled": self.amplitude_scaled.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DmpModel":
        return cls(
            K=d["K"], D=d["D"], alpha=d["alpha"], weights=d["weights"], centers=d["centers"],
            widths=d["widths"], x0=d["x0"], g=d["g"], tau=d["tau"],
            amplitude_scaled=d.get("amplitude_scaled"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "DmpModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def make_basis(n_basis: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Centers evenly spaced in time (log-spaced in phase) and their widths."""
    if n_basis < 2:
        raise InvalidInput("n_basis must be >= 2")
    centers = np.exp(-alpha * np.linspace(0.0, 1.0, n_basis))
    widths = np.empty(n_basis)
    widths[:-1] = 1.0 / np.diff(centers) ** 2
    widths[-1] = widths[-2]
    return centers, widths


def basis_features(s: np.ndarray, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    psi = np.exp(-widths[None, :] * (s[:, None] - centers[None, :]) ** 2)
    return psi * s[:, None] / (psi.sum(axis=1, keepdims=True) + 1e-300)


def learn_from_demo(
    demo: Demonstration,
    n_basis: int = 50,
    K: float = DEFAULT_K,
    D: float | None = None,
    final_phase: float = FINAL_PHASE,
    ridge: float = 1e-9,
) -> DmpModel:
    """Fit forcing-term weights to a demonstration by linear least squares.

    The goal is the final demonstrated position and ``tau`` is the demo
    duration; ``alpha`` puts the phase at ``final_phase`` at ``t = T`` so the
    forcing term has almost vanished when the demo ends.
    """
    if n_basis < 2:
        raise InvalidInput("n_basis must be >= 2")
    n = demo.x.shape[0]
    if n < 2 or demo.T <= 0:
        raise FitError("demonstration is too short to fit")
    D = 2.0 * np.sqrt(K) if D is None else D
    tau = demo.T
    alpha = -np.log(final_phase)
    t = np.linspace(0.0, demo.T, n)
    s = np.exp(-alpha * t / tau)
    x0, g = demo.x[0], demo.x[-1]
    amp = g - x0
    scaled = np.abs(amp) > _AMP_EPS * np.maximum(1.0, np.abs(demo.x).max(axis=0))
    amp_eff = np.where(scaled, amp, 1.0)

    f_target = (
        tau**2 * demo.xdd - K * (g - demo.x) + D * tau * demo.xd + K * (g - x0) * s[:, None]
    ) / (K * amp_eff)

    centers, widths = make_basis(n_basis, alpha)
    Phi = basis_features(s, centers, widths)
    gram = Phi.T @ Phi
    reg = ridge * max(np.trace(gram) / n_basis, 1e-12)
    try:
        weights = np.linalg.solve(gram + reg * np.eye(n_basis), Phi.T @ f_target).T
    except np.linalg.LinAlgError as exc:
        raise FitError(f"singular forcing-term regression: {exc}") from exc
    if not np.all(np.isfinite(weights)):
        raise FitError("forcing-term regression produced non-finite weights")
    return DmpModel(K, D, alpha, weights, centers, widths, x0, g, tau, scaled)


@dataclass
class DmpRollout:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    s: np.ndarray


def _derivs(model: DmpModel, x, v, s, x0, g, amp, tau):
    f = model.forcing(np.array([s]))[0]
    K, D = model.K, model.D
    dv = (K * (g - x) - D * v - K * (g - x0) * s + K * amp * f) / tau
    return v / tau, dv, -model.alpha * s / tau


def rollout(
    model: DmpModel,
    x0=None,
    g=None,
    tau: float | None = None,
    dt: float = DEFAULT_DT,
    s_min: float = 1e-3,
    t_max: float | None = None,
) -> DmpRollout:
    """Integrate the DMP with RK4 from ``s = 1`` until ``s < s_min``.

    ``t_max`` (seconds) optionally stops the integration earlier.
    """
    if dt <= 0:
        raise InvalidInput("dt must be positive")
    tau = model.tau if tau is None else float(tau)
    if tau <= 0:
        raise InvalidInput("tau must be positive")
    x0 = model.x0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    g = model.g if g is None else np.atleast_1d(np.asarray(g, dtype=float))
    amp = np.where(model.amplitude_scaled, g - x0, 1.0)

    n_steps = int(np.ceil(tau * np.log(1.0 / s_min) / (model.alpha * dt)))
    if t_max is not None:
        n_steps = min(n_steps, int(np.floor(t_max / dt + 1e-9)))
    ts = np.arange(n_steps + 1) * dt
    xs = np.empty((n_steps + 1, x0.size))
    vs = np.empty_like(xs)
    ss = np.empty(n_steps + 1)
    x, v, s = x0.copy(), np.zeros_like(x0), 1.0
    xs[0], vs[0], ss[0] = x, v, s
    h = dt
    for i in range(1, n_steps + 1):
        k1 = _derivs(model, x, v, s, x0, g, amp, tau)
        k2 = _derivs(model, x + h / 2 * k1[0], v + h / 2 * k1[1], s + h / 2 * k1[2], x0, g, amp, tau)
        k3 = _derivs(model, x + h / 2 * k2[0], v + h / 2 * k2[1], s + h / 2 * k2[2], x0, g, amp, tau)
        k4 = _derivs(model, x + h * k3[0], v + h * k3[1], s + h * k3[2], x0, g, amp, tau)
        x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        v = v + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        s = s + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.isfinite(s)):
            raise NumericalError("non-finite DMP state", iteration=i)
        xs[i], vs[i], ss[i] = x, v, s
    return DmpRollout(ts, xs, vs, ss)


def convergence_time(roll: DmpRollout, x0, g, level: float = 0.95) -> np.ndarray:
    """First time each dimension stays within ``(1 - level)|g - x0|`` of ``g``."""
    x0 = np.atleast_1d(x0)
    g = np.atleast_1d(g)
    tol = (1.0 - level) * np.abs(g - x0)
    out = np.full(x0.size, np.nan)
    for j in range(x0.size):
        inside = np.abs(roll.x[:, j] - g[j]) <= tol[j]
        outside = np.flatnonzero(~inside)
        if outside.size == 0:
            out[j] = roll.t[0]
        elif outside[-1] + 1 < roll.t.size:
            out[j] = roll.t[outside[-1] + 1]
    return out


def minimum_jerk(x0, g, T: float, dt: float = DEFAULT_DT) -> np.ndarray:
    """Minimum-jerk position profile from ``x0`` to ``g`` sampled every ``dt``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    u = np.linspace(0.0, 1.0, int(round(T / dt)) + 1)[:, None]
    return x0 + (g - x0) * (10 * u**3 - 15 * u**4 + 6 * u**5)
