"""Trained sequence models and the queries run against them."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..errors import InvalidInput
from . import kernels
from .obs import LOG_2PI, gaussian_loglik, regressors

FORMAT_VERSION = 1
ALLOCATIONS = ("hmm", "sticky_hdp")


@dataclass
class Hyperparams:
    """Priors and inference settings.

    ``a, b`` are the shape/rate of the Gamma prior on the transition
    concentration (its mean ``a / b`` is used as a point value), ``c, d``
    the Beta prior on the self-transition fraction (kept for the record),
    ``gamma`` the top-level stick-breaking concentration and ``kappa`` the
    sticky self-transition bias.  ``nu``/``Delta`` parameterize the
    inverse-Wishart prior on the noise covariance (mean
    ``nu Delta / (nu - d - 1)``); ``M``/``V`` the matrix-normal prior on the
    regression matrix.  ``None`` entries are filled from data by
    :func:`kitrecover.bnp_hmm.empirical_bayes_init` at fit time.
    """

    a: float = 0.5
    b: float = 5.0
    c: float = 1.0
    d: float = 10.0
    gamma: float = 5.0
    kappa: float = 50.0
    nu: float | None = None
    Delta: np.ndarray | None = None
    M: np.ndarray | None = None
    V: np.ndarray | None = None
    s_F: float = 1.0
    K_trunc: int = 10
    max_iter: int = 1000
    n_restarts: int = 1
    tol: float = 1e-6
    hmm_alpha: float = 1.0

    @property
    def alpha(self) -> float:
        return self.a / self.b

    def validate(self, dim: int | None = None) -> None:
        if self.K_trunc < 1:
            raise InvalidInput("K_trunc must be >= 1")
        if self.kappa < 0:
            raise InvalidInput("kappa must be >= 0")
        if self.a <= 0 or self.b <= 0 or self.gamma <= 0:
            raise InvalidInput("concentration hyperparameters must be positive")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise InvalidInput("max_iter and n_restarts must be >= 1")
        if dim is not None and self.nu is not None and self.nu <= dim + 1:
            raise InvalidInput(f"nu must exceed d + 1 = {dim + 1}")
        for name in ("Delta", "V"):
            mat = getattr(self, name)
            if mat is None:
                continue
            mat = np.asarray(mat, dtype=float)
            if not np.allclose(mat, mat.T, atol=1e-10):
                raise InvalidInput(f"{name} must be symmetric")
            if np.any(np.linalg.eigvalsh(mat) <= 0):
                raise InvalidInput(f"{name} must be positive definite")

    def replace(self, **kw) -> "Hyperparams":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return Hyperparams(**d)

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            out[name] = np.asarray(val).tolist() if isinstance(val, np.ndarray) else val
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        kw = dict(d)
        for name in ("Delta", "M", "V"):
            if kw.get(name) is not None:
                kw[name] = np.asarray(kw[name], dtype=float)
        return cls(**kw)


@dataclass
class HmmModel:
    """Plug-in HMM: expected transition/initial probabilities and per-state
    regression parameters ``A`` (``(K, d, p)``) and noise ``Sigma``."""

    pi0: np.ndarray
    trans: np.ndarray
    obs_kind: str
    A: np.ndarray
    Sigma: np.ndarray
    hyper: Hyperparams = field(default_factory=Hyperparams)
    allocation: str = "sticky_hdp"
    elbo_trace: list = field(default_factory=list)
    state_counts: np.ndarray | None = None

    def __post_init__(self):
        self.pi0 = np.asarray(self.pi0, dtype=float)
        self.trans = np.atleast_2d(np.asarray(self.trans, dtype=float))
        self.A = np.asarray(self.A, dtype=float)
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        K = self.pi0.size
        if self.trans.shape != (K, K) or self.A.shape[0] != K or self.Sigma.shape[0] != K:
            raise InvalidInput("inconsistent state counts in HmmModel")
        self._chol = np.linalg.cholesky(self.Sigma)
        self._chol_inv = np.linalg.inv(self._chol)
        self._logdet = 2.0 * np.log(np.diagonal(self._chol, axis1=1, axis2=2)).sum(axis=1)
        with np.errstate(divide="ignore"):
            self._log_pi0 = np.log(self.pi0)
            self._log_trans = np.log(self.trans)

    @property
    def K(self) -> int:
        return self.pi0.size

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def _check(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise InvalidInput(f"sequence dimension {x.shape[1]} != model dimension {self.dim}")
        return x

    def emission_loglik(self, x) -> np.ndarray:
        x = self._check(x)
        return gaussian_loglik(self.A, self.Sigma, x, regressors(x, self.obs_kind))

    def emission_step(self, x_t: np.ndarray, u_t: np.ndarray) -> np.ndarray:
        """Per-state log density of one observation given its regressor."""
        resid = x_t[None, :] - self.A @ u_t
        z = np.einsum("kij,kj->ki", self._chol_inv, resid)
        return -0.5 * (self.dim * LOG_2PI + self._logdet + np.einsum("ki,ki->k", z, z))

    # --- persistence ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "kitrecover.hmm",
            "version": FORMAT_VERSION,
            "allocation": self.allocation,
            "obs_kind": self.obs_kind,
            "K": self.K,
            "dim": self.dim,
            "hyper": self.hyper.to_dict(),
            "pi0": self.pi0.tolist(),
            "trans": self.trans.tolist(),
            "A": self.A.tolist(),
            "Sigma": self.Sigma.tolist(),
            "state_counts": None if self.state_counts is None else np.asarray(self.state_counts).tolist(),
            "elbo_trace": [float(v) for v in self.elbo_trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        if d.get("format") != "kitrecover.hmm":
            raise InvalidInput("not an HMM model record")
        if d.get("version", 0) > FORMAT_VERSION:
            raise InvalidInput(f"unsupported model version {d['version']}")
        return cls(
            pi0=d["pi0"], trans=d["trans"], obs_kind=d["obs_kind"], A=d["A"], Sigma=d["Sigma"],
            hyper=Hyperparams.from_dict(d["hyper"]), allocation=d["allocation"],
            elbo_trace=list(d.get("elbo_trace", [])),
            state_counts=None if d.get("state_counts") is None else np.asarray(d["state_counts"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "HmmModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def cumulative_log_likelihood(model: HmmModel, seq) -> np.ndarray:
    """``L_t = log p(x_1, ..., x_t)`` for every prefix, via the log-space forward recursion."""
    log_b = model.emission_loglik(seq)
    _, cum = kernels.forward_log(model._log_pi0, model._log_trans, log_b)
    return cum


def log_likelihood(model: HmmModel, seq, upto: int | None = None) -> float:
    """Cumulative log-likelihood of the first ``upto`` observations (all by default)."""
    x = model._check(seq)
    if upto is not None:
        if not 1 <= upto <= x.shape[0]:
            raise InvalidInput("upto must lie in [1, len(seq)]")
        x = x[:upto]
    return float(cumulative_log_likelihood(model, x)[-1])


def forward_gradient(model: HmmModel, seq) -> np.ndarray:
    """Per-step increments ``L_t - L_{t-1}`` (the first entry is ``L_1``)."""
    cum = cumulative_log_likelihood(model, seq)
    return np.diff(cum, prepend=0.0)


def viterbi(model: HmmModel, seq) -> np.ndarray:
    """MAP state path (0-based state indices) under the plug-in parameters."""
    log_b = model.emission_loglik(seq)
    return kernels.viterbi(model._log_pi0, model._log_trans, log_b)


class ForwardFilter:
    """Incremental forward recursion: feed one observation, get ``grad L_t``.

    Produces exactly the values of :func:`forward_gradient` on the prefix
    seen so far.
    """

    def __init__(self, model: HmmModel):
        self.model = model
        self.reset()

    def reset(self) -> None:
        self.log_alpha: np.ndarray | None = None
        self.prev: np.ndarray | None = None
        self.L = 0.0
        self.t = 0

    def update(self, x_t) -> float:
        m = self.model
        x_t = np.asarray(x_t, dtype=float)
        if x_t.shape != (m.dim,):
            raise InvalidInput(f"observation must have shape ({m.dim},)")
        if m.obs_kind == "var":
            u = x_t if self.prev is None else self.prev
        else:
            u = np.ones(1)
        log_b = m.emission_step(x_t, u)
        if self.log_alpha is None:
            la = m._log_pi0 + log_b
        else:
            la = log_b + logsumexp(self.log_alpha[:, None] + m._log_trans, axis=0)
        L_new = float(logsumexp(la))
        grad = L_new - self.L
        self.log_alpha, self.prev, self.L = la, x_t, L_new
        self.t += 1
        return grad
