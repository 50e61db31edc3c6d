"""Deterministic quadrature oracles (p = 1 only).

These routines re-derive the univariate marginal likelihoods and Bayes
factors through numerical integration instead of the closed forms and
samplers used elsewhere, so the two code paths can be cross-checked
against each other.  Everything here is intentionally independent of
:func:`forensic_bf.likelihoods.log_marginal_single_source` beyond the
elementary normal pdf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.special import logsumexp
from scipy.stats import invgamma, norm

from .types import (
    BackgroundDatabase,
    DimensionMismatchError,
    ObservationSet,
)

__all__ = [
    "latent_marginal_adaptive",
    "latent_marginal_grid",
    "GridPosterior",
    "grid_posterior_theta_a",
    "grid_posterior_theta_b",
    "bf_quadrature_cs",
    "bf_quadrature_ss",
]


def _require_univariate(*sets):
    for s in sets:
        if s is not None and s.p != 1:
            raise DimensionMismatchError("quadrature oracles support p=1 only")


def _log_integrand(a, x, mu, var_b, var_w):
    out = norm.logpdf(a, loc=mu, scale=math.sqrt(var_b))
    for xi in x:
        out = out + norm.logpdf(xi, loc=a, scale=math.sqrt(var_w))
    return out


def latent_marginal_adaptive(x, mu, var_b, var_w) -> float:
    """Log marginal of univariate items by adaptive quadrature.

    Integrates prod_i N(x_i; a, var_w) * N(a; mu, var_b) over the latent
    effect a with ``scipy.integrate.quad``, after factoring out the peak
    of the log integrand for stability.  Returns the log value.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    # locate the integrand peak on a coarse grid spanning data and prior
    lo = min(x.min(), mu) - 10.0 * math.sqrt(max(var_b, var_w))
    hi = max(x.max(), mu) + 10.0 * math.sqrt(max(var_b, var_w))
    probe = np.linspace(lo, hi, 2001)
    shift = float(np.max(_log_integrand(probe, x, mu, var_b, var_w)))

    def f(a):
        return math.exp(_log_integrand(a, x, mu, var_b, var_w) - shift)

    val, _ = integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-11, limit=400)
    return math.log(val) + shift


def latent_marginal_grid(x, mu, var_b, var_w, nodes: int = 400) -> float:
    """Same integral on a fixed Gauss-Legendre grid over the latent effect."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    lo = min(x.min(), mu) - 12.0 * math.sqrt(max(var_b, var_w))
    hi = max(x.max(), mu) + 12.0 * math.sqrt(max(var_b, var_w))
    z, w = leggauss(nodes)
    a = 0.5 * (hi - lo) * z + 0.5 * (hi + lo)
    logw = np.log(0.5 * (hi - lo) * w)
    return float(logsumexp(logw + _log_integrand(a, x, mu, var_b, var_w)))


def _source_stats(db: BackgroundDatabase):
    counts = np.array([s.n for s in db.sources], dtype=float)
    means = np.array([s.items.mean() for s in db.sources])
    scatters = np.array(
        [float(np.sum((s.items - s.items.mean()) ** 2)) for s in db.sources]
    )
    return counts, means, scatters


def _log_marginal_grid_1d(n, mean, scatter, mu, vb, vw):
    """Vectorized univariate compound-symmetry log marginal over a grid."""
    total = vw + n * vb
    return -0.5 * (
        n * math.log(2.0 * math.pi)
        + (n - 1) * np.log(vw)
        + np.log(total)
        + scatter / vw
        + n * (mean - mu) ** 2 / total
    )


@dataclass(frozen=True)
class GridPosterior:
    """A tensor-grid representation of a univariate-parameter posterior.

    ``coords`` maps coordinate names to flattened node positions and
    ``log_w`` holds unnormalized log posterior weights (likelihood *
    prior * quadrature weight) at the nodes.
    """

    coords: dict
    log_w: np.ndarray

    @property
    def log_norm(self) -> float:
        return float(logsumexp(self.log_w))

    def expect(self, values: np.ndarray) -> float:
        """Posterior expectation of a function tabulated on the nodes."""
        w = np.exp(self.log_w - self.log_norm)
        return float(np.sum(w * values))

    def log_expect_exp(self, log_values: np.ndarray) -> float:
        """Log posterior expectation of exp(log_values) on the nodes."""
        return float(logsumexp(self.log_w + log_values)) - self.log_norm


def _gl_axis(lo, hi, nodes):
    z, w = leggauss(nodes)
    return 0.5 * (hi - lo) * z + 0.5 * (hi + lo), np.log(0.5 * (hi - lo) * w)


def grid_posterior_theta_a(
    db: BackgroundDatabase,
    prior,
    nodes: int = 64,
    mean_width: float = 12.0,
    log_var_width: float = 4.0,
) -> GridPosterior:
    """Tensor-grid posterior of (mu, var_b, var_w) given the background.

    The grid covers mu on a linear axis centered at the average source
    mean and both variances on log axes centered at their moment
    estimates.  ``prior`` is a sampler ``PriorSpec``; for p=1 its
    inverse-Wishart blocks reduce to inverse-gamma densities.
    """
    _require_univariate(*db.sources)
    counts, means, scatters = _source_stats(db)
    n_a = counts.shape[0]

    vw_hat = max(float(scatters.sum() / max(counts.sum() - n_a, 1.0)), 1e-8)
    vb_hat = max(float(np.var(means)) - vw_hat / float(np.mean(counts)), vw_hat / 20.0)
    center = float(np.mean(means))
    half = mean_width * math.sqrt(vb_hat + vw_hat / float(np.mean(counts))) / math.sqrt(n_a)
    half = max(half, 1e-3)

    mu_ax, mu_lw = _gl_axis(center - half, center + half, nodes)
    ub_ax, ub_lw = _gl_axis(
        math.log(vb_hat) - log_var_width, math.log(vb_hat) + log_var_width, nodes
    )
    uw_ax, uw_lw = _gl_axis(
        math.log(vw_hat) - log_var_width, math.log(vw_hat) + log_var_width, nodes
    )

    mu, ub, uw = np.meshgrid(mu_ax, ub_ax, uw_ax, indexing="ij")
    lw = (
        np.add.outer(np.add.outer(mu_lw, ub_lw), uw_lw)
        + ub  # Jacobians of the log-variance axes
        + uw
    )
    mu, ub, uw, lw = (v.ravel() for v in (mu, ub, uw, lw))
    vb, vw = np.exp(ub), np.exp(uw)

    m0 = float(prior.mean.m0[0])
    v0 = float(prior.mean.V0[0, 0])
    lw = lw + norm.logpdf(mu, loc=m0, scale=math.sqrt(v0))
    lw = lw + invgamma.logpdf(vb, a=prior.between.nu / 2.0, scale=prior.between.scale[0, 0] / 2.0)
    lw = lw + invgamma.logpdf(vw, a=prior.within.nu / 2.0, scale=prior.within.scale[0, 0] / 2.0)
    for n_i, mean_i, sc_i in zip(counts, means, scatters):
        lw = lw + _log_marginal_grid_1d(n_i, mean_i, sc_i, mu, vb, vw)
    return GridPosterior(coords={"mu": mu, "var_b": vb, "var_w": vw}, log_w=lw)


def grid_posterior_theta_b(
    x_b: ObservationSet,
    prior,
    nodes: int = 96,
    mean_width: float = 12.0,
    log_var_width: float = 4.0,
) -> GridPosterior:
    """Tensor-grid posterior of (mu_b, var_wb) given the subject's data."""
    _require_univariate(x_b)
    x = x_b.items.ravel()
    n = x.shape[0]
    vwb_hat = max(float(np.var(x)), 1e-8)
    center = float(np.mean(x))
    half = max(mean_width * math.sqrt(vwb_hat / n), 1e-3)

    mu_ax, mu_lw = _gl_axis(center - half, center + half, nodes)
    u_ax, u_lw = _gl_axis(
        math.log(vwb_hat) - log_var_width, math.log(vwb_hat) + log_var_width, nodes
    )
    mu, u = np.meshgrid(mu_ax, u_ax, indexing="ij")
    lw = np.add.outer(mu_lw, u_lw) + u
    mu, u, lw = (v.ravel() for v in (mu, u, lw))
    vwb = np.exp(u)

    m0 = float(prior.subject_mean.m0[0])
    v0 = float(prior.subject_mean.V0[0, 0])
    lw = lw + norm.logpdf(mu, loc=m0, scale=math.sqrt(v0))
    lw = lw + invgamma.logpdf(
        vwb, a=prior.subject_within.nu / 2.0, scale=prior.subject_within.scale[0, 0] / 2.0
    )
    dev_sq = np.subtract.outer(x, mu) ** 2  # (n, G)
    lw = lw + np.sum(
        -0.5 * (math.log(2.0 * math.pi) + np.log(vwb)[None, :] + dev_sq / vwb[None, :]),
        axis=0,
    )
    return GridPosterior(coords={"mu_b": mu, "var_wb": vwb}, log_w=lw)


def _set_stats_1d(x: ObservationSet):
    v = x.items.ravel()
    return v.shape[0], float(v.mean()), float(np.sum((v - v.mean()) ** 2))


def bf_quadrature_cs(
    prior, db: BackgroundDatabase, x_b: ObservationSet, x_c: ObservationSet, nodes: int = 64
) -> float:
    """Log of the common-source Bayes factor by 3-D tensor-grid quadrature.

    Both marginal likelihoods integrate against the same background-only
    posterior, so its normalizing constant cancels in the ratio.
    """
    _require_univariate(x_b, x_c)
    post = grid_posterior_theta_a(db, prior, nodes=nodes)
    mu, vb, vw = (post.coords[k] for k in ("mu", "var_b", "var_w"))

    both = np.concatenate([x_b.items.ravel(), x_c.items.ravel()])
    n1, m1, s1 = both.shape[0], float(both.mean()), float(np.sum((both - both.mean()) ** 2))
    log_f1 = _log_marginal_grid_1d(n1, m1, s1, mu, vb, vw)
    nb, mb, sb = _set_stats_1d(x_b)
    nc, mc, sc = _set_stats_1d(x_c)
    log_f2 = _log_marginal_grid_1d(nb, mb, sb, mu, vb, vw) + _log_marginal_grid_1d(
        nc, mc, sc, mu, vb, vw
    )
    return float(
        logsumexp(post.log_w + log_f1) - logsumexp(post.log_w + log_f2)
    )


def bf_quadrature_ss(
    prior, db: BackgroundDatabase, x_b: ObservationSet, x_c: ObservationSet, nodes: int = 64
) -> float:
    """Log of the specific-source Bayes factor by tensor-grid quadrature.

    Numerator and denominator use different posteriors (subject-data and
    background, respectively), so each integral is normalized on its own
    grid before the ratio is taken.
    """
    _require_univariate(x_b, x_c)
    post_b = grid_posterior_theta_b(x_b, prior, nodes=max(nodes, 96))
    post_a = grid_posterior_theta_a(db, prior, nodes=nodes)

    xc = x_c.items.ravel()
    mu_b, vwb = post_b.coords["mu_b"], post_b.coords["var_wb"]
    dev_sq = np.subtract.outer(xc, mu_b) ** 2
    log_f1 = np.sum(
        -0.5 * (math.log(2.0 * math.pi) + np.log(vwb)[None, :] + dev_sq / vwb[None, :]),
        axis=0,
    )
    nc, mc, sc = _set_stats_1d(x_c)
    mu, vb, vw = (post_a.coords[k] for k in ("mu", "var_b", "var_w"))
    log_f2 = _log_marginal_grid_1d(nc, mc, sc, mu, vb, vw)
    return float(post_b.log_expect_exp(log_f1) - post_a.log_expect_exp(log_f2))
