"""Truncated mean-field variational coordinate ascent for (sticky HDP-)HMMs.

One sweep is a local step (forward-backward responsibilities under the
expected log parameters) followed by a global step (conjugate MNIW
posteriors and Dirichlet transition posteriors).  For the sticky HDP
allocation the top-level stick weights ``beta`` are re-estimated from
expected table counts and kept only if the objective improves.  Merge and
delete moves are proposals evaluated by a full sweep and accepted only when
the objective does not decrease, so the recorded trace is monotone.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from ..errors import InvalidInput, NumericalError
from . import kernels
from .model import ALLOCATIONS, HmmModel, Hyperparams
from .obs import (
    OBS_KINDS,
    MNIWPosterior,
    MNIWPrior,
    SuffStats,
    expected_loglik,
    log_marginal,
    posterior,
    regressors,
    suff_stats,
)

log = logging.getLogger(__name__)

SCATTER_EPS = 1e-6
MIN_STATE_COUNT = 1.0


def empirical_bayes_init(trials, s_F: float = 1.0) -> tuple[float, np.ndarray]:
    """Return ``(nu, Delta)`` from the pooled covariance of ``trials``.

    ``nu = d + 2`` and ``E[Sigma] = s_F * cov``; ``Delta`` inverts the
    inverse-Wishart mean ``nu Delta / (nu - d - 1)``.
    """
    if len(trials) == 0:
        raise InvalidInput("need at least one trial")
    X = np.vstack([np.atleast_2d(np.asarray(x, dtype=float)) for x in trials])
    n, d = X.shape
    if n <= d:
        raise InvalidInput("need more samples than dimensions")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / n
    e_sigma = s_F * cov
    if np.linalg.matrix_rank(e_sigma) < d or np.linalg.eigvalsh(e_sigma).min() <= 0:
        warnings.warn("rank-deficient scatter matrix; regularizing with 1e-6 I", RuntimeWarning)
        e_sigma = e_sigma + SCATTER_EPS * np.eye(d)
    nu = d + 2.0
    return nu, e_sigma * (nu - d - 1.0) / nu


def build_prior(hyper: Hyperparams, trials, obs_kind: str) -> MNIWPrior:
    d = np.asarray(trials[0]).shape[1]
    if hyper.nu is None or hyper.Delta is None:
        nu, Delta = empirical_bayes_init(trials, hyper.s_F)
        nu = nu if hyper.nu is None else hyper.nu
        Delta = Delta if hyper.Delta is None else np.asarray(hyper.Delta, dtype=float)
    else:
        nu, Delta = hyper.nu, np.asarray(hyper.Delta, dtype=float)
    if obs_kind == "var":
        M = np.zeros((d, d)) if hyper.M is None else np.asarray(hyper.M, dtype=float)
        V = np.eye(d) if hyper.V is None else np.asarray(hyper.V, dtype=float)
    else:
        M = np.zeros((d, 1))
        V = np.eye(1)
    if nu <= d + 1:
        raise InvalidInput(f"nu must exceed d + 1 = {d + 1}")
    return MNIWPrior(M, V, float(nu), nu * Delta)


def _ln_dirichlet_norm(theta: np.ndarray) -> np.ndarray:
    """Row-wise log multivariate beta function."""
    return gammaln(theta).sum(axis=-1) - gammaln(theta.sum(axis=-1))


def _elog_dirichlet(theta: np.ndarray) -> np.ndarray:
    return digamma(theta) - digamma(theta.sum(axis=-1, keepdims=True))


@dataclass
class _Data:
    Y: np.ndarray
    U: np.ndarray
    bounds: list  # (start, stop) per sequence

    @property
    def N(self) -> int:
        return self.Y.shape[0]


@dataclass
class _State:
    post: MNIWPosterior
    stats: SuffStats
    theta: np.ndarray  # (K, K[+1]) transition Dirichlet posterior
    theta0: np.ndarray  # start-state Dirichlet posterior
    beta: np.ndarray | None
    xi: np.ndarray
    r1: np.ndarray
    R: np.ndarray | None = None
    H: float = 0.0
    elbo: float = -np.inf


class _Fitter:
    def __init__(self, data: _Data, prior: MNIWPrior, hyper: Hyperparams, allocation: str):
        self.data = data
        self.prior = prior
        self.hyper = hyper
        self.allocation = allocation
        self.K = hyper.K_trunc
        self.alpha = hyper.alpha

    # ---- allocation priors ---------------------------------------------------
    def trans_prior(self, beta):
        K = self.K
        if self.allocation == "hmm":
            return np.full((K, K), self.hyper.hmm_alpha), np.full(K, self.hyper.hmm_alpha)
        rows = np.tile(self.alpha * beta, (K, 1))
        rows[np.arange(K), np.arange(K)] += self.hyper.kappa
        return rows, self.alpha * beta

    def _pad(self, counts):
        if self.allocation == "hmm":
            return counts
        return np.concatenate([counts, np.zeros(counts.shape[:-1] + (1,))], axis=-1)

    def alloc_posterior(self, xi, r1, beta):
        prior_rows, prior_start = self.trans_prior(beta)
        return prior_rows + self._pad(xi), prior_start + self._pad(r1)

    def alloc_bound(self, theta, theta0, beta) -> float:
        prior_rows, prior_start = self.trans_prior(beta)
        val = (_ln_dirichlet_norm(theta) - _ln_dirichlet_norm(prior_rows)).sum()
        val += _ln_dirichlet_norm(theta0) - _ln_dirichlet_norm(prior_start)
        if self.allocation == "sticky_hdp":
            val += self.log_p_beta(beta)
        return float(val)

    def log_p_beta(self, beta) -> float:
        K = self.K
        remaining = 1.0 - np.concatenate([[0.0], np.cumsum(beta[:K])[:-1]])
        v = np.clip(beta[:K] / remaining, 1e-300, 1 - 1e-16)
        g = self.hyper.gamma
        return float(K * np.log(g) + (g - 1.0) * np.log1p(-v).sum())

    def beta_from_sticks(self, v):
        beta = np.empty(self.K + 1)
        rest = 1.0
        for k in range(self.K):
            beta[k] = v[k] * rest
            rest *= 1.0 - v[k]
        beta[self.K] = rest
        return beta

    def prior_beta(self):
        return self.beta_from_sticks(np.full(self.K, 1.0 / (1.0 + self.hyper.gamma)))

    def propose_beta(self, xi, r1, beta):
        ab = self.alpha * beta[: self.K]
        counts = np.vstack([xi, r1[None, :]])
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(counts > 0, ab * (digamma(ab + counts) - digamma(ab)), 0.0)
        diag = np.arange(self.K)
        m[diag, diag] *= ab / (ab + self.hyper.kappa)
        Mk = m.sum(axis=0)
        tail = np.concatenate([np.cumsum(Mk[::-1])[::-1][1:], [0.0]])
        v = (1.0 + Mk) / (1.0 + Mk + self.hyper.gamma + tail)
        return self.beta_from_sticks(v)

    # ---- sweeps ---------------------------------------------------------------
    def global_step(self, R, xi, r1, beta, stats=None) -> _State:
        stats = suff_stats(self.data.Y, self.data.U, R) if stats is None else stats
        post = posterior(self.prior, stats)
        theta, theta0 = self.alloc_posterior(xi, r1, beta)
        st = _State(post, stats, theta, theta0, beta, xi, r1, R)
        if self.allocation == "sticky_hdp":
            cand = self.propose_beta(xi, r1, beta)
            ct, ct0 = self.alloc_posterior(xi, r1, cand)
            if self.alloc_bound(ct, ct0, cand) > self.alloc_bound(theta, theta0, beta):
                st.theta, st.theta0, st.beta = ct, ct0, cand
        return st

    def local_step(self, st: _State, mask: np.ndarray | None = None):
        K = self.K
        Elogb = expected_loglik(st.post, self.data.Y, self.data.U)
        if mask is not None:
            Elogb[:, mask] = -1e300
        ElogA = _elog_dirichlet(st.theta)[:, :K]
        Elogpi0 = _elog_dirichlet(st.theta0)[:K]
        R = np.empty((self.data.N, K))
        xi = np.zeros((K, K))
        r1 = np.zeros(K)
        log_z = 0.0
        for a, b in self.data.bounds:
            resp, x, lz = kernels.forward_backward(Elogpi0, ElogA, Elogb[a:b])
            R[a:b] = resp
            xi += x
            r1 += resp[0]
            log_z += lz
        if mask is not None:
            R[:, mask] = 0.0
            Elogb[:, mask] = 0.0
        H = log_z - np.sum(R * Elogb) - np.sum(xi * ElogA) - r1 @ Elogpi0
        return R, xi, r1, float(H)

    def objective(self, st: _State) -> float:
        lm = log_marginal(self.prior, st.post).sum()
        return float(st.H + lm + self.alloc_bound(st.theta, st.theta0, st.beta))

    def sweep(self, st: _State, mask=None) -> _State:
        R, xi, r1, H = self.local_step(st, mask)
        new = self.global_step(R, xi, r1, st.beta)
        new.H = H
        new.elbo = self.objective(new)
        return new

    # ---- initialization -------------------------------------------------------
    def init_state(self, rng: np.random.Generator) -> _State:
        K = self.K
        labels = np.empty(self.data.N, dtype=np.int64)
        for a, b in self.data.bounds:
            T = b - a
            n_blocks = max(1, min(T, int(rng.integers(K, 2 * K + 1))))
            cuts = np.sort(rng.choice(np.arange(1, T), size=min(n_blocks - 1, T - 1), replace=False)) if T > 1 else []
            edges = np.concatenate([[0], cuts, [T]]).astype(int)
            for s, e in zip(edges[:-1], edges[1:]):
                labels[a + s : a + e] = rng.integers(K)
        R = np.zeros((self.data.N, K))
        R[np.arange(self.data.N), labels] = 1.0
        xi = np.zeros((K, K))
        r1 = np.zeros(K)
        for a, b in self.data.bounds:
            np.add.at(xi, (labels[a : b - 1], labels[a + 1 : b]), 1.0)
            r1[labels[a]] += 1.0
        beta = self.prior_beta() if self.allocation == "sticky_hdp" else None
        return self.global_step(R, xi, r1, beta)

    # ---- moves ----------------------------------------------------------------
    def try_merges(self, st: _State, max_trials: int) -> tuple[_State, int]:
        active = np.flatnonzero(st.stats.N > 1e-6)
        if active.size < 2:
            return st, 0
        base = log_marginal(self.prior, st.post)
        cands = []
        for i, k in enumerate(active):
            for l in active[i + 1 :]:
                merged = posterior(self.prior, _single(st.stats.merge(k, l), k))
                gain = log_marginal(self.prior, merged)[0] - base[k] - base[l]
                cands.append((gain, int(k), int(l)))
        cands.sort(key=lambda c: -c[0])
        accepted = 0
        touched: set[int] = set()
        for gain, k, l in cands[:max_trials]:
            if k in touched or l in touched:
                continue
            R = st.R.copy()
            R[:, k] += R[:, l]
            R[:, l] = 0.0
            xi = st.xi.copy()
            xi[k, :] += xi[l, :]
            xi[l, :] = 0.0
            xi[:, k] += xi[:, l]
            xi[:, l] = 0.0
            r1 = st.r1.copy()
            r1[k] += r1[l]
            r1[l] = 0.0
            cand = self.global_step(R, xi, r1, st.beta)
            cand = self.sweep(cand)
            if cand.elbo >= st.elbo:
                st = cand
                accepted += 1
                touched.update((k, l))
        return st, accepted

    def try_deletes(self, st: _State, frac: float, max_trials: int) -> tuple[_State, int]:
        N = st.stats.N
        small = [int(k) for k in np.argsort(N) if 1e-6 < N[k] < frac * N.sum()][:max_trials]
        accepted = 0
        for k in small:
            mask = np.zeros(self.K, dtype=bool)
            mask[k] = True
            cand = self.sweep(st, mask=mask)
            cand = self.sweep(cand)
            if cand.elbo >= st.elbo:
                st = cand
                accepted += 1
        return st, accepted


def _single(stats: SuffStats, k: int) -> SuffStats:
    return SuffStats(stats.N[k : k + 1], stats.Syy[k : k + 1], stats.Syu[k : k + 1], stats.Suu[k : k + 1])


def _to_model(fitter: _Fitter, st: _State, obs_kind: str, hyper: Hyperparams, trace) -> HmmModel:
    keep = np.flatnonzero(st.stats.N >= MIN_STATE_COUNT)
    if keep.size == 0:
        keep = np.array([int(np.argmax(st.stats.N))])
    K = fitter.K
    trans = st.theta[:, :K] / st.theta.sum(axis=1, keepdims=True)
    trans = trans[np.ix_(keep, keep)]
    trans /= trans.sum(axis=1, keepdims=True)
    pi0 = (st.theta0[:K] / st.theta0.sum())[keep]
    pi0 /= pi0.sum()
    return HmmModel(
        pi0=pi0,
        trans=trans,
        obs_kind=obs_kind,
        A=st.post.M[keep],
        Sigma=st.post.mean_sigma()[keep],
        hyper=hyper,
        allocation=fitter.allocation,
        elbo_trace=list(trace),
        state_counts=st.stats.N[keep],
    )


def _prepare(trials, obs_kind):
    seqs = [np.atleast_2d(np.asarray(x, dtype=float)) for x in trials]
    if not seqs:
        raise InvalidInput("need at least one trial")
    d = seqs[0].shape[1]
    if any(s.shape[1] != d for s in seqs):
        raise InvalidInput("all trials must share the feature dimension")
    bounds, start = [], 0
    for s in seqs:
        bounds.append((start, start + s.shape[0]))
        start += s.shape[0]
    Y = np.vstack(seqs)
    U = np.vstack([regressors(s, obs_kind) for s in seqs])
    if not np.all(np.isfinite(Y)):
        raise InvalidInput("trials contain non-finite values")
    return _Data(Y, U, bounds)


@dataclass
class FitResult:
    model: HmmModel
    elbo: float
    n_iter: int
    converged: bool


def fit_single(
    trials,
    hyper: Hyperparams,
    allocation: str = "sticky_hdp",
    observation: str = "var",
    rng: np.random.Generator | int | None = 0,
    moves: bool = True,
    burn_in: int = 5,
    move_every: int = 5,
    max_merge_trials: int = 3,
    delete_frac: float = 0.01,
) -> FitResult:
    """One restart of coordinate ascent; see :func:`fit`."""
    if allocation not in ALLOCATIONS:
        raise InvalidInput(f"allocation must be one of {ALLOCATIONS}")
    if observation not in OBS_KINDS:
        raise InvalidInput(f"observation must be one of {OBS_KINDS}")
    rng = np.random.default_rng(rng)
    data = _prepare(trials, observation)
    hyper.validate()
    prior = build_prior(hyper, trials, observation)
    fitter = _Fitter(data, prior, hyper, allocation)
    st = fitter.init_state(rng)
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, hyper.max_iter + 1):
        st = fitter.sweep(st)
        if not np.isfinite(st.elbo):
            raise NumericalError("non-finite variational objective", iteration=it)
        prev = trace[-1] if trace else None
        trace.append(st.elbo)
        moved = 0
        small_change = prev is not None and abs(st.elbo - prev) <= hyper.tol * abs(prev)
        if moves and hyper.K_trunc > 1 and it >= burn_in and (it % move_every == 0 or small_change):
            st, n_del = fitter.try_deletes(st, delete_frac, max_trials=2)
            st, n_mrg = fitter.try_merges(st, max_merge_trials)
            moved = n_del + n_mrg
            if moved:
                trace.append(st.elbo)
        if small_change and not moved:
            converged = True
            break
    log.debug("fit finished after %d iterations (elbo=%.6g)", it, st.elbo)
    model = _to_model(fitter, st, observation, hyper, trace)
    return FitResult(model, st.elbo, it, converged)


def fit(
    trials,
    hyper: Hyperparams | None = None,
    allocation: str = "sticky_hdp",
    observation: str = "var",
    seed: int | None = 0,
    **kwargs,
) -> HmmModel:
    """Fit ``hyper.n_restarts`` times and keep the run with the best objective.

    Ties go to the lowest restart index.  ``kwargs`` are forwarded to
    :func:`fit_single` (move schedule, etc.).
    """
    hyper = Hyperparams() if hyper is None else hyper
    seeds = np.random.SeedSequence(seed).spawn(hyper.n_restarts)
    best: FitResult | None = None
    for ss in seeds:
        res = fit_single(trials, hyper, allocation, observation, np.random.default_rng(ss), **kwargs)
        if best is None or res.elbo > best.elbo:
            best = res
    return best.model
