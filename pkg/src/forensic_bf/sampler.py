"""Gibbs samplers for the posterior distributions of both frameworks.

The hierarchy is conjugate once the latent source effects are included
in the state: latent effects and the population mean have Gaussian full
conditionals, covariances have inverse-Wishart full conditionals.  One
latent effect is carried per background source, plus one per
unknown-source set that the conditioning model assigns to the
population (a shared effect under common-source M1, separate ones under
M2).

Randomness comes from numpy's Philox counter-based 64-bit generator;
per-chain streams are split off the run seed with
``numpy.random.SeedSequence.spawn``, so draw streams are reproducible
across platforms and independent across chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .types import (
    BackgroundDatabase,
    ChainFailureError,
    CommonSourceParams,
    DimensionMismatchError,
    Framework,
    InvalidParameterError,
    JointParams,
    Model,
    ObservationSet,
    SpecificSourceParams,
    as_model,
    concat_sets,
    _check_covariance,
    _as_mean,
)

__all__ = [
    "MeanPrior",
    "InverseWishartPrior",
    "PriorSpec",
    "ChainConfig",
    "ConditioningModel",
    "PosteriorDraws",
    "gibbs_cs",
    "gibbs_ss",
    "gibbs_background",
    "gibbs_subject",
    "ess",
    "sample_invwishart",
    "derive_prior",
]


@dataclass(frozen=True, eq=False)
class MeanPrior:
    """Gaussian prior N(m0, V0) on a mean parameter."""

    m0: np.ndarray
    V0: np.ndarray

    def __post_init__(self):
        m0 = _as_mean("m0", self.m0)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "V0", _check_covariance("V0", self.V0, m0.shape[0]))

    @property
    def p(self):
        return self.m0.shape[0]


@dataclass(frozen=True, eq=False)
class InverseWishartPrior:
    """Inverse-Wishart prior IW(nu, scale) on a covariance parameter."""

    nu: float
    scale: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float)
        p = scale.shape[0]
        object.__setattr__(self, "scale", _check_covariance("scale", scale, p))
        if not self.nu > p - 1:
            raise InvalidParameterError(
                f"inverse-Wishart degrees of freedom must exceed p-1={p - 1}, got {self.nu}"
            )

    @property
    def p(self):
        return self.scale.shape[0]

    @property
    def mean(self):
        """Prior mean, defined for nu > p + 1."""
        if self.nu <= self.p + 1:
            raise InvalidParameterError("inverse-Wishart mean requires nu > p + 1")
        return self.scale / (self.nu - self.p - 1)


@dataclass(frozen=True)
class PriorSpec:
    """Priors of the hierarchical model, subject blocks optional.

    ``fixed_*`` entries replace the corresponding inverse-Wishart prior
    by a point mass (the covariance is held at the given value), which
    the degenerate-prior calibration checks rely on.
    """

    mean: MeanPrior
    between: InverseWishartPrior
    within: InverseWishartPrior
    subject_mean: MeanPrior = None
    subject_within: InverseWishartPrior = None
    fixed_between: np.ndarray = None
    fixed_within: np.ndarray = None
    fixed_subject_within: np.ndarray = None

    def __post_init__(self):
        p = self.mean.p
        for name, block in (("between", self.between), ("within", self.within)):
            if block.p != p:
                raise DimensionMismatchError(f"{name} prior dimension mismatch")
        if (self.subject_mean is None) != (self.subject_within is None):
            raise InvalidParameterError(
                "subject prior requires both its mean and covariance blocks"
            )
        for fname in ("fixed_between", "fixed_within", "fixed_subject_within"):
            value = getattr(self, fname)
            if value is not None:
                object.__setattr__(self, fname, _check_covariance(fname, value, p))

    @property
    def p(self):
        return self.mean.p

    @property
    def has_subject(self):
        return self.subject_mean is not None

    def require_subject(self):
        if not self.has_subject:
            raise InvalidParameterError(
                "specific-source sampling needs subject prior blocks"
            )


@dataclass(frozen=True)
class ChainConfig:
    """Length, thinning, chain count, and seed of a sampling run.

    ``min_draws`` is the floor on total kept draws that downstream
    Bayes-factor estimation requires.
    """

    iterations: int = 10000
    burn_in: int = 2000
    thinning: int = 1
    chains: int = 1
    seed: int = 0
    min_draws: int = 1000

    def __post_init__(self):
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise InvalidParameterError(
                f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}"
            )
        if self.thinning < 1 or self.chains < 1:
            raise InvalidParameterError("thinning and chains must be >= 1")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidParameterError("seed must be a 64-bit unsigned integer")
        if self.kept_total < self.min_draws:
            raise InvalidParameterError(
                f"chain configuration keeps {self.kept_total} draws, "
                f"below the floor of {self.min_draws}"
            )

    @property
    def kept_per_chain(self):
        return (self.iterations - self.burn_in + self.thinning - 1) // self.thinning

    @property
    def kept_total(self):
        return self.kept_per_chain * self.chains

    def replace(self, **kwargs):
        from dataclasses import replace

        return replace(self, **kwargs)


@dataclass(frozen=True)
class ConditioningModel:
    """Which framework and which conditioning model produced a posterior."""

    framework: Framework
    model: Model

    def __post_init__(self):
        from .types import as_framework

        object.__setattr__(self, "framework", as_framework(self.framework))
        object.__setattr__(self, "model", as_model(self.model))


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Stacked posterior draws with their conditioning tag and diagnostics.

    Parameter draws are stored column-wise (arrays of shape ``(T, p)``
    or ``(T, p, p)``); ``param_at`` reassembles the t-th draw as a
    parameter record.  ``conditioning`` is None for the auxiliary
    posteriors that condition on background or subject data only.
    """

    target: str
    conditioning: ConditioningModel
    seed: int
    n_chains: int
    mu: np.ndarray = None
    sigma_b: np.ndarray = None
    sigma_w: np.ndarray = None
    mu_b: np.ndarray = None
    sigma_wb: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def has_theta_a(self):
        return self.mu is not None

    @property
    def has_theta_b(self):
        return self.mu_b is not None

    @property
    def n_draws(self):
        block = self.mu if self.has_theta_a else self.mu_b
        return block.shape[0]

    @property
    def p(self):
        block = self.mu if self.has_theta_a else self.mu_b
        return block.shape[1]

    def param_at(self, t: int):
        theta_a = None
        if self.has_theta_a:
            theta_a = CommonSourceParams(
                mu=self.mu[t], sigma_b=self.sigma_b[t], sigma_w=self.sigma_w[t]
            )
        if not self.has_theta_b:
            return theta_a
        theta_b = SpecificSourceParams(mu_b=self.mu_b[t], sigma_wb=self.sigma_wb[t])
        if theta_a is None:
            return theta_b
        return JointParams(theta_a=theta_a, theta_b=theta_b)

    def validate_draws(self):
        """Check the positive-definiteness invariant on every stored draw."""
        for name in ("sigma_b", "sigma_w", "sigma_wb"):
            block = getattr(self, name)
            if block is None:
                continue
            for t in range(block.shape[0]):
                try:
                    np.linalg.cholesky(block[t])
                except np.linalg.LinAlgError as exc:
                    raise InvalidParameterError(
                        f"draw {t} of {name} is not positive definite"
                    ) from exc

    def __len__(self):
        return self.n_draws


def sample_invwishart(rng: np.random.Generator, nu: float, scale: np.ndarray) -> np.ndarray:
    """One inverse-Wishart draw via the Bartlett decomposition.

    If C is the lower Cholesky factor of ``scale`` and A the Bartlett
    factor of a Wishart(nu, I) variate, then M = C A^-T gives
    Sigma = M M^T ~ IW(nu, scale), positive definite by construction.
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    A = np.zeros((p, p))
    df = nu - np.arange(p)
    A[np.diag_indices(p)] = np.sqrt(2.0 * rng.standard_gamma(df / 2.0))
    if p > 1:
        A[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    C = np.linalg.cholesky(scale)
    M = solve_triangular(A, C.T, lower=True).T  # M = C A^-T
    return M @ M.T


def _spd_inverse(matrix):
    c = cho_factor(matrix, lower=True)
    return cho_solve(c, np.eye(matrix.shape[0]))


class _SetBlock:
    """Sufficient statistics of the observation sets sharing latent effects."""

    def __init__(self, sets):
        self.n_sets = len(sets)
        p = sets[0].p
        self.p = p
        self.counts = np.array([s.n for s in sets], dtype=float)
        self.sums = np.array([s.items.sum(axis=0) for s in sets])
        self.raw_ss = np.array([s.items.T @ s.items for s in sets])
        self.total = float(self.counts.sum())
        self.groups = [
            (float(c), np.nonzero(self.counts == c)[0])
            for c in np.unique(self.counts)
        ]

    def pooled_within(self):
        centered = self.raw_ss.sum(axis=0) - np.einsum(
            "k,kp,kq->pq", 1.0 / self.counts, self.sums, self.sums
        )
        dof = self.total - self.n_sets
        return centered, dof

    def set_means(self):
        return self.sums / self.counts[:, None]


class _DataBlock:
    """Sufficient statistics of iid data for a subject parameter block."""

    def __init__(self, x: ObservationSet):
        self.n = float(x.n)
        self.sum = x.items.sum(axis=0)
        self.raw_ss = x.items.T @ x.items
        self.p = x.p


def _ridge(matrix, rel=1e-6):
    p = matrix.shape[0]
    scale = max(float(np.trace(matrix)) / p, 1e-12)
    return matrix + rel * scale * np.eye(p)


def _init_theta_a(block: _SetBlock, prior: PriorSpec):
    means = block.set_means()
    mu = means.mean(axis=0)
    centered, dof = block.pooled_within()
    if dof >= 1.0:
        sigma_w = _ridge(centered / dof)
    else:
        sigma_w = prior.within.scale / max(prior.within.nu - block.p - 1, 1.0)
    dev = means - mu
    sigma_b = _ridge(dev.T @ dev / max(block.n_sets - 1, 1))
    if prior.fixed_between is not None:
        sigma_b = prior.fixed_between
    if prior.fixed_within is not None:
        sigma_w = prior.fixed_within
    return mu, sigma_b, sigma_w


def _init_theta_b(data: _DataBlock, prior: PriorSpec):
    mu_b = data.sum / data.n
    cov = data.raw_ss / data.n - np.outer(mu_b, mu_b)
    if data.n >= 2:
        sigma_wb = _ridge(cov * data.n / (data.n - 1.0))
    else:
        sigma_wb = prior.subject_within.scale / max(
            prior.subject_within.nu - data.p - 1, 1.0
        )
    if prior.fixed_subject_within is not None:
        sigma_wb = prior.fixed_subject_within
    return mu_b, sigma_wb


def _run_chain_theta_a(block, data_b, prior, cfg, rng, store):
    """One chain of the augmented Gibbs sweep; stores kept draws in `store`.

    ``block`` carries the sets with latent effects (theta_a part) and may
    be None for a subject-only run; ``data_b`` carries iid subject data
    (theta_b part) and may be None for a common-source run.
    """
    p = prior.p
    v0_inv = _spd_inverse(prior.mean.V0)
    v0_m0 = v0_inv @ prior.mean.m0

    if block is not None:
        mu, sigma_b, sigma_w = _init_theta_a(block, prior)
        latents = block.set_means()
    if data_b is not None:
        v0b_inv = _spd_inverse(prior.subject_mean.V0)
        v0b_m0 = v0b_inv @ prior.subject_mean.m0
        mu_b, sigma_wb = _init_theta_b(data_b, prior)

    kept = 0
    for it in range(cfg.iterations):
        if block is not None:
            b_inv = _spd_inverse(sigma_b)
            w_inv = _spd_inverse(sigma_w)
            base = b_inv @ mu
            # latent effects, grouped by replicate count
            for count, idx in block.groups:
                cov_g = _spd_inverse(b_inv + count * w_inv)
                chol_g = np.linalg.cholesky(cov_g)
                means = (base + block.sums[idx] @ w_inv.T) @ cov_g.T
                z = rng.standard_normal((idx.shape[0], p))
                latents[idx] = means + z @ chol_g.T
            # population mean
            prec = v0_inv + block.n_sets * b_inv
            cov_mu = _spd_inverse(prec)
            mean_mu = cov_mu @ (v0_m0 + b_inv @ latents.sum(axis=0))
            mu = mean_mu + np.linalg.cholesky(cov_mu) @ rng.standard_normal(p)
            # between-source covariance
            if prior.fixed_between is None:
                dev = latents - mu
                sigma_b = sample_invwishart(
                    rng, prior.between.nu + block.n_sets, prior.between.scale + dev.T @ dev
                )
            # within-source covariance
            if prior.fixed_within is None:
                cross = np.einsum("kp,kq->pq", latents, block.sums)
                resid = (
                    block.raw_ss.sum(axis=0)
                    - cross
                    - cross.T
                    + np.einsum("k,kp,kq->pq", block.counts, latents, latents)
                )
                sigma_w = sample_invwishart(
                    rng, prior.within.nu + block.total, prior.within.scale + resid
                )
        if data_b is not None:
            wb_inv = _spd_inverse(sigma_wb)
            cov_mb = _spd_inverse(v0b_inv + data_b.n * wb_inv)
            mean_mb = cov_mb @ (v0b_m0 + wb_inv @ data_b.sum)
            mu_b = mean_mb + np.linalg.cholesky(cov_mb) @ rng.standard_normal(p)
            if prior.fixed_subject_within is None:
                s = (
                    data_b.raw_ss
                    - np.outer(mu_b, data_b.sum)
                    - np.outer(data_b.sum, mu_b)
                    + data_b.n * np.outer(mu_b, mu_b)
                )
                sigma_wb = sample_invwishart(
                    rng, prior.subject_within.nu + data_b.n, prior.subject_within.scale + s
                )
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
            if block is not None:
                store["mu"].append(mu)
                store["sigma_b"].append(sigma_b)
                store["sigma_w"].append(sigma_w)
            if data_b is not None:
                store["mu_b"].append(mu_b)
                store["sigma_wb"].append(sigma_wb)
            kept += 1
    return kept


def _run_gibbs(target, conditioning, latent_sets, subject_data, prior, cfg):
    if latent_sets is not None and len(latent_sets) > 0:
        dims = {s.p for s in latent_sets}
        if dims != {prior.p}:
            raise DimensionMismatchError(
                f"data dimension {sorted(dims)} does not match prior p={prior.p}"
            )
        block = _SetBlock(latent_sets)
    else:
        block = None
    data_b = None
    if subject_data is not None:
        if subject_data.p != prior.p:
            raise DimensionMismatchError(
                f"subject data dimension {subject_data.p} != prior p={prior.p}"
            )
        prior.require_subject()
        data_b = _DataBlock(subject_data)

    store = {k: [] for k in ("mu", "sigma_b", "sigma_w", "mu_b", "sigma_wb")}
    streams = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.chains)
    try:
        for c in range(cfg.chains):
            rng = np.random.Generator(np.random.Philox(streams[c]))
            _run_chain_theta_a(block, data_b, prior, cfg, rng, store)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        raise ChainFailureError(f"Gibbs chain failed: {exc}") from exc

    arrays = {
        k: (np.array(v) if v else None) for k, v in store.items()
    }
    draws = PosteriorDraws(
        target=target,
        conditioning=conditioning,
        seed=int(cfg.seed),
        n_chains=cfg.chains,
        diagnostics={},
        **arrays,
    )
    draws.diagnostics.update(
        {
            "iterations": cfg.iterations,
            "burn_in": cfg.burn_in,
            "thinning": cfg.thinning,
            "kept_per_chain": cfg.kept_per_chain,
            "n_latent_effects": 0 if block is None else block.n_sets,
            "ess": _default_ess(draws),
        }
    )
    return draws


def _default_ess(draws: PosteriorDraws) -> dict:
    out = {}
    if draws.has_theta_a:
        out["mu[0]"] = _ess_series(draws.mu[:, 0], draws.n_chains)
        out["tr_sigma_b"] = _ess_series(np.trace(draws.sigma_b, axis1=1, axis2=2), draws.n_chains)
        out["tr_sigma_w"] = _ess_series(np.trace(draws.sigma_w, axis1=1, axis2=2), draws.n_chains)
    if draws.has_theta_b:
        out["mu_b[0]"] = _ess_series(draws.mu_b[:, 0], draws.n_chains)
        out["tr_sigma_wb"] = _ess_series(np.trace(draws.sigma_wb, axis1=1, axis2=2), draws.n_chains)
    return out


def gibbs_cs(
    db: BackgroundDatabase,
    x_b: ObservationSet,
    x_c: ObservationSet,
    prior: PriorSpec,
    model: Model,
    chain_config: ChainConfig,
) -> PosteriorDraws:
    """Draws from the common-source posterior of theta_a given all data.

    The unknown-source sets enter as additional population sources: one
    pooled set with a shared latent effect under M1, two sets with their
    own effects under M2.  The augmented state therefore holds
    ``N_a + 1`` latent effects under M1 and ``N_a + 2`` under M2.
    """
    model = as_model(model)
    if not (db.p == x_b.p == x_c.p):
        raise DimensionMismatchError("background and unknown sets disagree on p")
    if model is Model.M1:
        extra = [concat_sets(x_b, x_c, label="(unknown)")]
    else:
        extra = [x_b, x_c]
    return _run_gibbs(
        target="theta_a|background,x_b,x_c",
        conditioning=ConditioningModel(Framework.COMMON_SOURCE, model),
        latent_sets=list(db.sources) + extra,
        subject_data=None,
        prior=prior,
        cfg=chain_config,
    )


def gibbs_ss(
    db: BackgroundDatabase,
    x_b: ObservationSet,
    x_c: ObservationSet,
    prior: PriorSpec,
    model: Model,
    chain_config: ChainConfig,
) -> PosteriorDraws:
    """Draws from the specific-source posterior of (theta_a, theta_b).

    The subject's reference data ``x_b`` always informs theta_b; the
    unknown set ``x_c`` joins the subject block under M1 and enters the
    population block with its own latent effect under M2.  The two
    parameter blocks are a priori independent.
    """
    model = as_model(model)
    if not (db.p == x_b.p == x_c.p):
        raise DimensionMismatchError("background, subject, and unknown sets disagree on p")
    prior.require_subject()
    latent_sets = list(db.sources)
    subject_data = x_b
    if model is Model.M1:
        subject_data = concat_sets(x_b, x_c, label="(subject)")
    else:
        latent_sets = latent_sets + [x_c]
    return _run_gibbs(
        target="theta_a,theta_b|background,x_b,x_c",
        conditioning=ConditioningModel(Framework.SPECIFIC_SOURCE, model),
        latent_sets=latent_sets,
        subject_data=subject_data,
        prior=prior,
        cfg=chain_config,
    )


def gibbs_background(
    db: BackgroundDatabase, prior: PriorSpec, chain_config: ChainConfig
) -> PosteriorDraws:
    """Draws from the posterior of theta_a given the background only."""
    return _run_gibbs(
        target="theta_a|background",
        conditioning=None,
        latent_sets=list(db.sources),
        subject_data=None,
        prior=prior,
        cfg=chain_config,
    )


def gibbs_subject(
    x_b: ObservationSet, prior: PriorSpec, chain_config: ChainConfig
) -> PosteriorDraws:
    """Draws from the posterior of theta_b given the subject's data only."""
    prior.require_subject()
    return _run_gibbs(
        target="theta_b|x_b",
        conditioning=None,
        latent_sets=None,
        subject_data=x_b,
        prior=prior,
        cfg=chain_config,
    )


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    centered = x - x.mean()
    f = np.fft.rfft(centered, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f), n=2 * n)[:n]
    return acov / n


def _ess_scalar(x: np.ndarray) -> float:
    """Initial-positive-sequence ESS of one scalar chain segment."""
    n = x.shape[0]
    if np.all(x == x[0]):
        return float(n)
    acov = _autocovariance(x)
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    # sum adjacent-pair autocorrelations while the pair sums stay positive
    tau = -1.0
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        t += 2
    tau = max(tau, 1.0 / n)
    return max(n / tau, 1.0)


def _ess_series(series: np.ndarray, n_chains: int) -> float:
    series = np.asarray(series, dtype=float)
    per_chain = series.shape[0] // n_chains
    return float(
        sum(
            _ess_scalar(series[c * per_chain : (c + 1) * per_chain])
            for c in range(n_chains)
        )
    )


def ess(draws: PosteriorDraws, functional) -> float:
    """Effective sample size of a scalar functional of the draws.

    Uses the initial-positive-sequence autocorrelation estimator per
    chain and sums across chains.  A constant series has ESS equal to
    its length by convention.
    """
    if draws.n_draws < 10:
        raise InvalidParameterError("effective sample size needs at least 10 draws")
    series = np.array([functional(draws.param_at(t)) for t in range(draws.n_draws)])
    return _ess_series(series, draws.n_chains)


def _clip_spd(matrix, floor_rel=1e-8):
    """Force symmetric positive definiteness by eigenvalue clipping."""
    sym = 0.5 * (matrix + matrix.T)
    vals, vecs = np.linalg.eigh(sym)
    floor = max(float(vals.max()), 1e-12) * floor_rel
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def derive_prior(
    heldout: BackgroundDatabase, include_subject: bool = True, nu_extra: int = 4
) -> PriorSpec:
    """Method-of-moments prior hyperparameters from a held-out database.

    The mean prior is centered at the average held-out source mean with
    the covariance of those source means; each inverse-Wishart block
    uses nu = p + ``nu_extra`` with its scale chosen so the prior mean
    of the covariance equals the held-out moment estimate.  The subject
    blocks reuse the mean-prior moments and the within-source estimate.
    """
    p = heldout.p
    nu = float(p + nu_extra)
    block = _SetBlock(list(heldout.sources))
    means = block.set_means()
    m0 = means.mean(axis=0)
    v0 = _clip_spd(np.cov(means, rowvar=False).reshape(p, p))
    centered, dof = block.pooled_within()
    if dof < 1.0:
        raise InvalidParameterError(
            "held-out database needs replicate items to estimate the within covariance"
        )
    sw_hat = _clip_spd(centered / dof)
    sb_hat = _clip_spd(
        np.cov(means, rowvar=False).reshape(p, p)
        - sw_hat * float(np.mean(1.0 / block.counts))
    )
    factor = nu - p - 1.0
    prior = PriorSpec(
        mean=MeanPrior(m0=m0, V0=v0),
        between=InverseWishartPrior(nu=nu, scale=factor * sb_hat),
        within=InverseWishartPrior(nu=nu, scale=factor * sw_hat),
        subject_mean=MeanPrior(m0=m0, V0=v0) if include_subject else None,
        subject_within=(
            InverseWishartPrior(nu=nu, scale=factor * sw_hat) if include_subject else None
        ),
    )
    return prior
