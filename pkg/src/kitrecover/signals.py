"""Multimodal sensor streams: resampling, alignment, featurization, scaling.

A :class:`Trial` stores one skill execution as column arrays (wrench, twist,
pose and the two 28-taxel tactile pads).  ``extract_features`` turns it into
the 17-dimensional feature sequence used by every model downstream::

    [Fx Fy Fz | tx ty tz | vx vy vz | wx wy wz | |F| |tau| |v| |w| | taxel_max_std]
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInput, NoOverlap

CANONICAL_RATE = 50.0
DEFAULT_STD_WINDOW = 0.1
N_TAXELS = 28
FEATURE_DIM = 17

FEATURE_NAMES = (
    "fx", "fy", "fz", "tx", "ty", "tz",
    "vx", "vy", "vz", "wx", "wy", "wz",
    "f_norm", "tau_norm", "v_norm", "w_norm",
    "taxel_max_std",
)
RAW_COLUMNS = (
    ("fx", "fy", "fz", "tx", "ty", "tz")
    + ("vx", "vy", "vz", "wx", "wy", "wz")
    + ("px", "py", "pz", "qx", "qy", "qz", "qw")
    + tuple(f"tl{i}" for i in range(N_TAXELS))
    + tuple(f"tr{i}" for i in range(N_TAXELS))
)
MODALITIES = {"wrench": 6, "twist": 6, "pose": 7, "taxels_left": N_TAXELS, "taxels_right": N_TAXELS}


@dataclass(frozen=True)
class MultimodalSample:
    t: float
    wrench: np.ndarray
    twist: np.ndarray
    pose: np.ndarray
    taxels_left: np.ndarray
    taxels_right: np.ndarray

    def validate(self) -> None:
        arrays = (self.wrench, self.twist, self.pose, self.taxels_left, self.taxels_right)
        if not np.isfinite(self.t) or not all(np.all(np.isfinite(a)) for a in arrays):
            raise InvalidInput("non-finite sample")
        if abs(np.linalg.norm(self.pose[3:]) - 1.0) > 1e-6:
            raise InvalidInput("pose quaternion is not unit norm")


@dataclass
class Trial:
    """One skill execution stored column-wise.

    ``pose`` is position (m) followed by a unit quaternion in (x, y, z, w) order.
    """

    skill_id: str
    t: np.ndarray
    wrench: np.ndarray
    twist: np.ndarray
    pose: np.ndarray
    taxels_left: np.ndarray
    taxels_right: np.ndarray
    rate_hz: float | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = self.t.shape[0]
        if n == 0:
            raise InvalidInput("trial is empty")
        for name, width in MODALITIES.items():
            arr = np.asarray(getattr(self, name), dtype=float).reshape(n, width)
            setattr(self, name, arr)
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise InvalidInput("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def samples(self) -> Iterator[MultimodalSample]:
        for i in range(len(self)):
            yield MultimodalSample(
                float(self.t[i]), self.wrench[i], self.twist[i], self.pose[i],
                self.taxels_left[i], self.taxels_right[i],
            )

    @classmethod
    def from_samples(cls, skill_id: str, samples: Sequence[MultimodalSample], rate_hz=None) -> "Trial":
        if not samples:
            raise InvalidInput("trial is empty")
        return cls(
            skill_id,
            np.array([s.t for s in samples]),
            np.stack([s.wrench for s in samples]),
            np.stack([s.twist for s in samples]),
            np.stack([s.pose for s in samples]),
            np.stack([s.taxels_left for s in samples]),
            np.stack([s.taxels_right for s in samples]),
            rate_hz,
        )

    def raw_matrix(self) -> np.ndarray:
        return np.hstack([self.wrench, self.twist, self.pose, self.taxels_left, self.taxels_right])

    @classmethod
    def from_raw_matrix(cls, skill_id: str, t, raw: np.ndarray, rate_hz=None) -> "Trial":
        raw = np.asarray(raw, dtype=float)
        parts = np.split(raw, np.cumsum(list(MODALITIES.values()))[:-1], axis=1)
        return cls(skill_id, t, *parts, rate_hz=rate_hz)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.raw_matrix())) or not np.all(np.isfinite(self.t)):
            raise InvalidInput("trial contains non-finite values")
        qn = np.linalg.norm(self.pose[:, 3:], axis=1)
        if np.any(np.abs(qn - 1.0) > 1e-6):
            raise InvalidInput("pose quaternion is not unit norm")


def _grid(t0: float, t1: float, rate: float) -> np.ndarray:
    n = int(np.floor((t1 - t0) * rate + 1e-9)) + 1
    return t0 + np.arange(n) / rate


def _interp_columns(t_new: np.ndarray, t: np.ndarray, values: np.ndarray) -> np.ndarray:
    if t.shape[0] == 1:
        return np.repeat(values[:1], t_new.shape[0], axis=0)
    # np.interp is 1-D; index arithmetic keeps this vectorized across columns
    idx = np.clip(np.searchsorted(t, t_new, side="right") - 1, 0, t.shape[0] - 2)
    w = ((t_new - t[idx]) / (t[idx + 1] - t[idx]))[:, None]
    return values[idx] * (1.0 - w) + values[idx + 1] * w


def _renormalize_quaternions(pose: np.ndarray) -> np.ndarray:
    pose = pose.copy()
    norms = np.linalg.norm(pose[:, 3:], axis=1, keepdims=True)
    pose[:, 3:] /= np.where(norms > 0, norms, 1.0)
    return pose


def resample(trial: Trial, rate: float = CANONICAL_RATE) -> Trial:
    """Linearly interpolate ``trial`` onto a uniform inclusive grid at ``rate`` Hz."""
    if rate <= 0:
        raise InvalidInput("rate must be positive")
    if len(trial) == 0:
        raise InvalidInput("trial is empty")
    t_new = _grid(trial.t[0], trial.t[-1], rate)
    cols = {name: _interp_columns(t_new, trial.t, getattr(trial, name)) for name in MODALITIES}
    cols["pose"] = _renormalize_quaternions(cols["pose"])
    return Trial(trial.skill_id, t_new, rate_hz=rate, **cols)


def align(
    streams: Mapping[str, tuple[np.ndarray, np.ndarray]],
    rate: float = CANONICAL_RATE,
    skill_id: str = "",
) -> Trial:
    """Merge per-modality ``(timestamps, values)`` streams onto one grid.

    The grid spans the overlap of all streams.  Every modality in
    ``MODALITIES`` must be present.
    """
    missing = set(MODALITIES) - set(streams)
    if missing:
        raise InvalidInput(f"missing modalities: {sorted(missing)}")
    spans = []
    for name, (ts, vals) in streams.items():
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            raise InvalidInput(f"stream {name!r} is empty")
        spans.append((ts[0], ts[-1]))
    t0 = max(s[0] for s in spans)
    t1 = min(s[1] for s in spans)
    if t1 < t0:
        raise NoOverlap(f"streams do not overlap ({t0:.3f} > {t1:.3f})")
    t_new = _grid(t0, t1, rate)
    cols = {}
    for name, width in MODALITIES.items():
        ts, vals = streams[name]
        vals = np.asarray(vals, dtype=float).reshape(len(ts), width)
        cols[name] = _interp_columns(t_new, np.asarray(ts, dtype=float), vals)
    cols["pose"] = _renormalize_quaternions(cols["pose"])
    return Trial(skill_id, t_new, rate_hz=rate, **cols)


def _trailing_std(x: np.ndarray, n: int) -> np.ndarray:
    """Population std over the trailing ``n`` rows (fewer at the start)."""
    T = x.shape[0]
    out = np.zeros_like(x)
    head = min(n - 1, T)
    for i in range(head):
        out[i] = x[: i + 1].std(axis=0)
    if T >= n:
        win = sliding_window_view(x, n, axis=0)  # (T-n+1, cols, n)
        out[n - 1 :] = win.std(axis=-1)
    return out


def extract_features(trial: Trial, std_window: float = DEFAULT_STD_WINDOW) -> np.ndarray:
    """Return the ``(T, 17)`` feature sequence of a resampled, aligned trial."""
    rate = trial.rate_hz
    if rate is None:
        rate = 1.0 / np.median(np.diff(trial.t)) if len(trial) > 1 else CANONICAL_RATE
    if std_window < 1.0 / rate - 1e-12:
        raise InvalidInput("std_window is shorter than one sample period")
    n = max(1, int(round(std_window * rate)))
    w, tw = trial.wrench, trial.twist
    norms = np.column_stack([
        np.linalg.norm(w[:, :3], axis=1),
        np.linalg.norm(w[:, 3:], axis=1),
        np.linalg.norm(tw[:, :3], axis=1),
        np.linalg.norm(tw[:, 3:], axis=1),
    ])
    taxels = np.hstack([trial.taxels_left, trial.taxels_right])
    taxel_std = _trailing_std(taxels, n).max(axis=1)
    return np.column_stack([w, tw, norms, taxel_std])


@dataclass
class ScalingProfile:
    max_abs: np.ndarray
    zero_dims: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.max_abs = np.asarray(self.max_abs, dtype=float)
        if np.any(self.max_abs < 0):
            raise InvalidInput("max_abs entries must be non-negative")
        self.zero_dims = tuple(int(i) for i in np.flatnonzero(self.max_abs == 0))

    @property
    def divisor(self) -> np.ndarray:
        return np.where(self.max_abs > 0, self.max_abs, 1.0)

    def to_dict(self) -> dict:
        return {"max_abs": self.max_abs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingProfile":
        return cls(np.asarray(d["max_abs"], dtype=float))


def fit_scaling(trials: Sequence[np.ndarray]) -> ScalingProfile:
    if len(trials) == 0:
        raise InvalidInput("need at least one trial to fit scaling")
    stacked = np.vstack([np.asarray(x, dtype=float) for x in trials])
    return ScalingProfile(np.abs(stacked).max(axis=0))


def apply_scaling(profile: ScalingProfile, seq: np.ndarray) -> np.ndarray:
    return np.asarray(seq, dtype=float) / profile.divisor


# --- trial files -----------------------------------------------------------------

def write_trial_file(path, t: np.ndarray, values: np.ndarray, columns: Sequence[str]) -> None:
    """Write ``t`` plus ``values`` as a comma-separated UTF-8 file with a header."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", *columns])
    for ti, row in zip(t, values):
        writer.writerow([repr(float(ti))] + [repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_trial(path, trial: Trial) -> None:
    write_trial_file(path, trial.t, trial.raw_matrix(), RAW_COLUMNS)


def write_features(path, t: np.ndarray, features: np.ndarray) -> None:
    write_trial_file(path, t, features, FEATURE_NAMES)


def read_trial_file(path, skill_id: str = "") -> Trial | tuple[np.ndarray, np.ndarray]:
    """Read a trial file, auto-detecting raw vs featurized columns.

    Returns a :class:`Trial` for raw files and ``(t, features)`` for
    featurized files.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [list(map(float, r)) for r in reader if r]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    if header[0] != "t":
        raise InvalidInput("first column must be 't'")
    cols = tuple(header[1:])
    if cols == FEATURE_NAMES:
        return data[:, 0], data[:, 1:]
    if cols == RAW_COLUMNS:
        return Trial.from_raw_matrix(skill_id, data[:, 0], data[:, 1:])
    raise InvalidInput(f"unrecognized trial header: {header[:4]}...")
