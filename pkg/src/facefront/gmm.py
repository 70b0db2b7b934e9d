"""Diagonal-covariance Gaussian mixtures trained bottom-up with EM.

The mixture supplies the fuzzy membership function that routes a feature
vector to the local regressors of a cascade stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if mu.shape != var.shape or mu.shape[0] != w.size:
            raise DimensionError("weights, means and variances disagree in shape")
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("mixing weights must be non-negative with positive sum")
        if not np.all(var > 0):
            raise ValueError("variances must be positive")
        for name, a in (("weights", w / w.sum()), ("means", mu), ("variances", var)):
            a = np.array(a)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    def log_weighted_densities(self, x):
        """``log(pi_i) + log N(x; mu_i, diag(var_i))`` with shape (n, C)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DimensionError(f"feature dimension {x.shape[1]} != mixture dimension {self.dim}")
        return self._log_wd(x, x * x)

    def _log_wd(self, x, x2):
        inv = 1.0 / self.variances
        quad = x2 @ inv.T - 2.0 * x @ (self.means * inv).T + np.sum(self.means ** 2 * inv, axis=1)
        norm = np.sum(np.log(self.variances), axis=1) + self.dim * LOG_2PI
        return np.log(self.weights) - 0.5 * (np.maximum(quad, 0.0) + norm)

    def log_likelihood(self, x):
        return float(np.sum(logsumexp(self.log_weighted_densities(x), axis=1)))


def membership(gmm, x):
    """Posterior component probabilities; a vector for one sample, (n, C) for many."""
    single = np.asarray(x).ndim == 1
    lp = gmm.log_weighted_densities(x)
    psi = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    psi /= psi.sum(axis=1, keepdims=True)
    return psi[0] if single else psi


def _kmeanspp(x, k, rng):
    n = len(x)
    centres = [int(rng.integers(n))]
    d2 = np.sum((x - x[centres[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            candidates = np.setdiff1d(np.arange(n), centres)
            nxt = int(rng.choice(candidates))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        centres.append(nxt)
        d2 = np.minimum(d2, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[centres].copy()


def _em(x, weights, means, variances, floor, tol, max_iter):
    n = len(x)
    x2 = x * x
    history = []
    gmm = GaussianMixture(weights, means, variances)
    for _ in range(max_iter):
        lp = gmm._log_wd(x, x2)
        lse = logsumexp(lp, axis=1, keepdims=True)
        ll = float(np.sum(lse))
        if history and ll - history[-1] < tol * max(1.0, abs(ll)):
            history.append(ll)
            break
        history.append(ll)
        resp = np.exp(lp - lse)
        nk = resp.sum(axis=0)
        live = nk > 1e-10
        mu = np.array(gmm.means)
        var = np.array(gmm.variances)
        mu[live] = (resp[:, live].T @ x) / nk[live, None]
        ex2 = (resp[:, live].T @ x2) / nk[live, None]
        var[live] = np.maximum(ex2 - mu[live] ** 2, floor)
        gmm = GaussianMixture(np.maximum(nk, 1e-300) / n, mu, var)
    return gmm, history


def _sym_kl(gmm):
    mu, var = gmm.means, gmm.variances
    c = len(mu)
    out = np.full((c, c), np.inf)
    for i in range(c):
        for j in range(i + 1, c):
            d2 = (mu[i] - mu[j]) ** 2
            kl = 0.5 * np.sum(var[i] / var[j] + var[j] / var[i] + d2 / var[i] + d2 / var[j] - 2.0)
            out[i, j] = out[j, i] = kl
    return out


def _merge(gmm, i, j):
    w, mu, var = gmm.weights, gmm.means, gmm.variances
    wt = w[i] + w[j]
    m = (w[i] * mu[i] + w[j] * mu[j]) / wt
    v = (w[i] * (var[i] + mu[i] ** 2) + w[j] * (var[j] + mu[j] ** 2)) / wt - m ** 2
    keep = [k for k in range(len(w)) if k not in (i, j)]
    return (
        np.append(w[keep], wt),
        np.vstack([mu[keep], m]),
        np.vstack([var[keep], np.maximum(v, var.min())]),
    )


def gmm_fit(features, n_components, seed=0, tol=1e-8, max_iter=300, oversample=2):
    """Fit a ``n_components`` mixture, starting over-complete and merging down.

    ``oversample * n_components`` components are seeded k-means++ style and
    refined by EM; the closest pair under symmetric KL divergence is then
    merged by moment matching and EM re-run, until ``n_components`` remain.
    The returned mixture's ``history`` is the log-likelihood trace of the
    final EM run.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.size == 0:
        raise ValueError("cannot fit a mixture to an empty sample")
    n, _ = x.shape
    if n_components < 1:
        raise ValueError("need at least one component")
    if n_components > n:
        raise ValueError(f"{n_components} components requested for {n} samples")
    rng = np.random.default_rng(seed)
    # centring keeps E[x^2] - mu^2 well conditioned in the M-step
    centre = x.mean(axis=0)
    x = x - centre
    global_var = x.var(axis=0)
    floor = 1e-6 * float(global_var.mean()) + 1e-12
    k = min(oversample * n_components, n)
    means = _kmeanspp(x, k, rng)
    variances = np.tile(np.maximum(global_var, floor), (k, 1))
    gmm, history = _em(x, np.full(k, 1.0 / k), means, variances, floor, tol, max_iter)
    while gmm.n_components > n_components:
        kl = _sym_kl(gmm)
        i, j = np.unravel_index(int(np.argmin(kl)), kl.shape)
        gmm, history = _em(x, *_merge(gmm, i, j), floor, tol, max_iter)
    return GaussianMixture(gmm.weights, gmm.means + centre, gmm.variances, tuple(history))
