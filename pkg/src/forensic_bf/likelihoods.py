"""Log-likelihoods and likelihood-ratio functions for both frameworks.

All densities are evaluated in log space.  The marginal density of a set
of items sharing one latent source effect has the compound-symmetry
covariance ``I_n (x) sigma_w + J_n (x) sigma_b`` over the stacked
``n * p`` vector; it is evaluated through the orthogonal split into the
set mean and the within-set deviations,

    log f(x_1..x_n) = -0.5 * [ n p log(2 pi)
                               + (n - 1) log|sigma_w|
                               + log|sigma_w + n sigma_b|
                               + tr(sigma_w^-1 S_c)
                               + n (xbar - mu)^T (sigma_w + n sigma_b)^-1 (xbar - mu) ]

with ``S_c`` the centered scatter of the set.  Cost is O(p^3 + n p^2)
per set, never an (n p) x (n p) factorization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import reparam
from .types import (
    CommonSourceParams,
    DimensionMismatchError,
    Framework,
    InvalidParameterError,
    JointParams,
    Model,
    ObservationSet,
    as_framework,
    as_model,
    concat_sets,
)

LOG_2PI = math.log(2.0 * math.pi)


class SetStats(NamedTuple):
    """Sufficient statistics of an observation set for the Gaussian model."""

    n: int
    mean: np.ndarray
    scatter: np.ndarray  # sum of (x_i - mean)(x_i - mean)^T


def set_stats(x: ObservationSet) -> SetStats:
    items = x.items
    mean = items.mean(axis=0)
    dev = items - mean
    return SetStats(n=items.shape[0], mean=mean, scatter=dev.T @ dev)


def _chol(matrix: np.ndarray, name: str):
    try:
        return cho_factor(matrix, lower=True)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameterError(f"{name} is not positive definite") from exc


def _logdet_from_chol(factor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def log_marginal_stats(stats: SetStats, theta: CommonSourceParams) -> float:
    """Compound-symmetry log marginal from precomputed set statistics."""
    if stats.mean.shape[0] != theta.p:
        raise DimensionMismatchError(
            f"data dimension {stats.mean.shape[0]} does not match parameter p={theta.p}"
        )
    return _log_marginal_raw(stats, theta.mu, theta.sigma_b, theta.sigma_w)


def _log_marginal_raw(stats: SetStats, mu, sigma_b, sigma_w) -> float:
    """Compound-symmetry log marginal from raw arrays (no record validation)."""
    n, p = stats.n, stats.mean.shape[0]
    cw = _chol(sigma_w, "sigma_w")
    ct = _chol(sigma_w + n * sigma_b, "sigma_w + n*sigma_b")
    d = stats.mean - mu
    return -0.5 * (
        n * p * LOG_2PI
        + (n - 1) * _logdet_from_chol(cw)
        + _logdet_from_chol(ct)
        + float(np.trace(cho_solve(cw, stats.scatter)))
        + n * float(d @ cho_solve(ct, d))
    )


def _log_iid_raw(stats: SetStats, mean, cov) -> float:
    """Sum of iid Gaussian log densities from set statistics."""
    n, p = stats.n, stats.mean.shape[0]
    c = _chol(cov, "covariance")
    d = stats.mean - mean
    return -0.5 * (
        n * p * LOG_2PI
        + n * _logdet_from_chol(c)
        + float(np.trace(cho_solve(c, stats.scatter)))
        + n * float(d @ cho_solve(c, d))
    )


def log_marginal_series(stats: SetStats, mus, sigma_bs, sigma_ws) -> np.ndarray:
    """Single-source log marginal of one set across a stack of parameters.

    ``mus`` is (T, p) and the covariances (T, p, p); returns a (T,)
    array.  The univariate case is evaluated in closed form across the
    whole stack at once.
    """
    n = stats.n
    if stats.mean.shape[0] == 1:
        vb = sigma_bs[:, 0, 0]
        vw = sigma_ws[:, 0, 0]
        total = vw + n * vb
        scatter = stats.scatter[0, 0]
        return -0.5 * (
            n * LOG_2PI
            + (n - 1) * np.log(vw)
            + np.log(total)
            + scatter / vw
            + n * (stats.mean[0] - mus[:, 0]) ** 2 / total
        )
    return np.array(
        [
            _log_marginal_raw(stats, mus[t], sigma_bs[t], sigma_ws[t])
            for t in range(mus.shape[0])
        ]
    )


def log_iid_series(stats: SetStats, means, covs) -> np.ndarray:
    """Iid Gaussian log likelihood of one set across a stack of parameters."""
    n = stats.n
    if stats.mean.shape[0] == 1:
        v = covs[:, 0, 0]
        return -0.5 * (
            n * LOG_2PI
            + n * np.log(v)
            + (stats.scatter[0, 0] + n * (stats.mean[0] - means[:, 0]) ** 2) / v
        )
    return np.array(
        [_log_iid_raw(stats, means[t], covs[t]) for t in range(means.shape[0])]
    )


def log_marginal_single_source(x: ObservationSet, theta: CommonSourceParams) -> float:
    """Log density of one observation set under a single latent source effect.

    The set's items are modeled as iid N(a, sigma_w) given a latent
    effect a ~ N(mu, sigma_b), with the effect integrated out.
    """
    if x.p != theta.p:
        raise DimensionMismatchError(
            f"data dimension {x.p} does not match parameter p={theta.p}"
        )
    return log_marginal_stats(set_stats(x), theta)


def log_gaussian_iid(x: ObservationSet, mean: np.ndarray, cov: np.ndarray) -> float:
    """Sum of iid multivariate normal log densities over the set's items."""
    mean = np.asarray(mean, dtype=float)
    p = mean.shape[0]
    if x.p != p:
        raise DimensionMismatchError(
            f"data dimension {x.p} does not match parameter p={p}"
        )
    c = _chol(np.asarray(cov, dtype=float), "covariance")
    dev = x.items - mean
    quad = float(np.sum(dev * cho_solve(c, dev.T).T))
    return -0.5 * (x.n * p * LOG_2PI + x.n * _logdet_from_chol(c) + quad)


def log_lik_cs(
    x_b: ObservationSet,
    x_c: ObservationSet,
    theta: CommonSourceParams,
    model: Model,
) -> float:
    """Common-source log likelihood of the two unknown sets under M1 or M2.

    M1 pools both sets around one shared latent effect; M2 gives each
    its own, so the sets are independent single-source marginals.
    """
    model = as_model(model)
    if x_b.p != x_c.p:
        raise DimensionMismatchError(f"x_b has p={x_b.p} but x_c has p={x_c.p}")
    if model is Model.M1:
        return log_marginal_single_source(concat_sets(x_b, x_c), theta)
    return log_marginal_single_source(x_b, theta) + log_marginal_single_source(
        x_c, theta
    )


def lr_cs(x_b: ObservationSet, x_c: ObservationSet, theta: CommonSourceParams) -> float:
    """Common-source log likelihood ratio, log M1-likelihood minus log M2."""
    return log_lik_cs(x_b, x_c, theta, Model.M1) - log_lik_cs(
        x_b, x_c, theta, Model.M2
    )


def log_lik_ss(x_c: ObservationSet, theta: JointParams, model: Model) -> float:
    """Specific-source log likelihood of the unknown set under M1 or M2.

    M1 treats items as iid draws from the designated subject's own
    population; M2 treats the set as coming from a fresh random source
    of the background population.
    """
    model = as_model(model)
    if model is Model.M1:
        return log_gaussian_iid(x_c, theta.theta_b.mu_b, theta.theta_b.sigma_wb)
    return log_marginal_single_source(x_c, theta.theta_a)


def lr_ss(x_c: ObservationSet, theta: JointParams) -> float:
    """Specific-source log likelihood ratio, log M1 minus log M2."""
    return log_lik_ss(x_c, theta, Model.M1) - log_lik_ss(x_c, theta, Model.M2)


@dataclass(frozen=True)
class LrContext:
    """Fixed unknown-source data turning the LR into a function of theta.

    ``log_lr`` evaluates the log likelihood ratio at an unconstrained
    coordinate vector (means identity, covariances log-Cholesky, see
    :mod:`forensic_bf.reparam`).
    """

    framework: Framework
    x_c: ObservationSet
    x_b: ObservationSet = None
    p: int = None

    def __post_init__(self):
        object.__setattr__(self, "framework", as_framework(self.framework))
        if self.p is None:
            object.__setattr__(self, "p", self.x_c.p)
        if self.framework is Framework.COMMON_SOURCE and self.x_b is None:
            raise DimensionMismatchError("common-source context requires x_b")

    @property
    def dim(self) -> int:
        if self.framework is Framework.COMMON_SOURCE:
            return reparam.common_dim(self.p)
        return reparam.joint_dim(self.p)

    def log_lr(self, vec: np.ndarray) -> float:
        if self.framework is Framework.COMMON_SOURCE:
            return lr_cs(self.x_b, self.x_c, reparam.unpack_common(vec, self.p))
        return lr_ss(self.x_c, reparam.unpack_joint(vec, self.p))


def lr_gradient(theta: np.ndarray, context, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the LR (value scale).

    Differentiates ``exp(log_lr)`` coordinate by coordinate in the
    unconstrained parameterization with per-coordinate step
    ``h_i = max(step, step * |theta_i|)``; every perturbed point decodes
    to a valid positive definite parameter, so no constraint handling is
    needed.  ``context`` is any object with a ``log_lr(vec)`` method,
    typically an :class:`LrContext`.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.shape[0]):
        h = max(step, step * abs(theta[i]))
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += h
        lo[i] -= h
        grad[i] = (
            math.exp(context.log_lr(hi)) - math.exp(context.log_lr(lo))
        ) / (2.0 * h)
    return grad
