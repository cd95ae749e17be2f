"""Conjugate matrix-normal inverse-Wishart regression observations.

Both observation kinds are linear regressions ``y_t = A u_t + e_t`` with
``e_t ~ N(0, Sigma)``:

* ``"var"``: first-order vector autoregression, ``u_t = x_{t-1}``.  The first
  sample of every sequence is scored against ``u_1 = x_1`` (zero innovation
  convention).
* ``"gauss"``: constant regressor ``u_t = [1]``, so ``A`` is the state mean.

Prior: ``Sigma ~ IW(nu, S)`` with ``S = nu * Delta`` (mean
``nu Delta / (nu - d - 1)``), and ``A | Sigma ~ MN(M, Sigma, V)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, multigammaln

LOG_PI = np.log(np.pi)
LOG_2PI = np.log(2.0 * np.pi)

OBS_KINDS = ("var", "gauss")


def regressors(x: np.ndarray, kind: str) -> np.ndarray:
    """Regressor rows ``u_t`` for sequence ``x`` of shape ``(T, d)``."""
    if kind == "var":
        u = np.empty_like(x)
        u[0] = x[0]
        u[1:] = x[:-1]
        return u
    if kind == "gauss":
        return np.ones((x.shape[0], 1))
    raise ValueError(f"unknown observation kind {kind!r}")


@dataclass
class MNIWPrior:
    M: np.ndarray  # (d, p)
    V: np.ndarray  # (p, p)
    nu: float
    S: np.ndarray  # (d, d), equals nu * Delta

    @property
    def d(self) -> int:
        return self.M.shape[0]

    @property
    def p(self) -> int:
        return self.M.shape[1]


@dataclass
class MNIWPosterior:
    """Per-state posterior parameters, stacked along the leading axis."""

    M: np.ndarray  # (K, d, p)
    V: np.ndarray  # (K, p, p)
    nu: np.ndarray  # (K,)
    S: np.ndarray  # (K, d, d)
    N: np.ndarray  # (K,)

    @property
    def K(self) -> int:
        return self.M.shape[0]

    def mean_sigma(self) -> np.ndarray:
        d = self.M.shape[1]
        return self.S / (self.nu - d - 1.0)[:, None, None]


@dataclass
class SuffStats:
    N: np.ndarray  # (K,)
    Syy: np.ndarray  # (K, d, d)
    Syu: np.ndarray  # (K, d, p)
    Suu: np.ndarray  # (K, p, p)

    def merge(self, k: int, l: int) -> "SuffStats":
        """Stats with state ``l`` folded into ``k`` (``l`` left empty)."""
        out = SuffStats(self.N.copy(), self.Syy.copy(), self.Syu.copy(), self.Suu.copy())
        for arr in (out.N, out.Syy, out.Syu, out.Suu):
            arr[k] = arr[k] + arr[l]
            arr[l] = 0.0
        return out


def suff_stats(Y: np.ndarray, U: np.ndarray, R: np.ndarray) -> SuffStats:
    """Responsibility-weighted regression statistics; ``R`` is ``(N, K)``."""
    N = R.sum(axis=0)
    Syy = np.einsum("nk,ni,nj->kij", R, Y, Y, optimize=True)
    Syu = np.einsum("nk,ni,nj->kij", R, Y, U, optimize=True)
    Suu = np.einsum("nk,ni,nj->kij", R, U, U, optimize=True)
    return SuffStats(N, Syy, Syu, Suu)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def posterior(prior: MNIWPrior, st: SuffStats) -> MNIWPosterior:
    Vinv = np.linalg.inv(prior.V)
    Vn_inv = Vinv[None] + st.Suu
    Vn = _sym(np.linalg.inv(Vn_inv))
    Mn = np.einsum("kij,kjl->kil", (prior.M @ Vinv)[None] + st.Syu, Vn)
    nun = prior.nu + st.N
    Sn = (
        prior.S[None]
        + st.Syy
        + (prior.M @ Vinv @ prior.M.T)[None]
        - np.einsum("kij,kjl,kml->kim", Mn, Vn_inv, Mn)
    )
    return MNIWPosterior(Mn, Vn, nun, _sym(Sn), st.N.copy())


def log_marginal(prior: MNIWPrior, post: MNIWPosterior) -> np.ndarray:
    """Per-state ``log int p(A, Sigma) prod_t N(y_t | A u_t, Sigma)^{r_t}``."""
    d = prior.d
    _, ld_V0 = np.linalg.slogdet(prior.V)
    _, ld_S0 = np.linalg.slogdet(prior.S)
    _, ld_Vn = np.linalg.slogdet(post.V)
    _, ld_Sn = np.linalg.slogdet(post.S)
    return (
        -0.5 * post.N * d * LOG_PI
        + 0.5 * d * (ld_Vn - ld_V0)
        + 0.5 * prior.nu * ld_S0
        - 0.5 * post.nu * ld_Sn
        + multigammaln(0.5 * post.nu, d)
        - multigammaln(0.5 * prior.nu, d)
    )


def expected_loglik(post: MNIWPosterior, Y: np.ndarray, U: np.ndarray) -> np.ndarray:
    """``E_q[log N(y_t | A_k u_t, Sigma_k)]`` for every row and state, ``(N, K)``."""
    K, d, _ = post.M.shape
    L = np.linalg.cholesky(post.S)
    _, ld_S = np.linalg.slogdet(post.S)
    i = np.arange(1, d + 1)
    e_logdet_prec = digamma(0.5 * (post.nu[:, None] + 1.0 - i[None, :])).sum(axis=1) + d * np.log(2.0) - ld_S
    out = np.empty((Y.shape[0], K))
    for k in range(K):
        resid = Y - U @ post.M[k].T
        z = np.linalg.solve(L[k], resid.T)
        quad = post.nu[k] * np.einsum("ij,ij->j", z, z)
        lev = d * np.einsum("ni,ij,nj->n", U, post.V[k], U)
        out[:, k] = -0.5 * d * LOG_2PI + 0.5 * e_logdet_prec[k] - 0.5 * (quad + lev)
    return out


def gaussian_loglik(A: np.ndarray, Sigma: np.ndarray, Y: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Plug-in log densities ``log N(y_t | A_k u_t, Sigma_k)``, ``(N, K)``."""
    K, d, _ = A.shape
    L = np.linalg.cholesky(Sigma)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    out = np.empty((Y.shape[0], K))
    for k in range(K):
        resid = Y - U @ A[k].T
        z = np.linalg.solve(L[k], resid.T)
        out[:, k] = -0.5 * (d * LOG_2PI + logdet[k] + np.einsum("ij,ij->j", z, z))
    return out
