"""Simulation harness for the large-background limit theory.

The harness checks, by simulation, that (i) every Bayes-factor estimator
converges to the likelihood ratio at the data-generating parameter as
the background grows, (ii) the normal-approximation credible interval
carries posterior mass approaching its nominal level, and (iii) the
posterior law of the LR approaches a normal shape.  The unknown-source
observations are drawn once per experiment and byte-frozen; only the
background (and, for specific-source, the subject data, coupled as
n_b = n_a) grows along the schedule.

Also hosts the maximum-likelihood and observed-information machinery
used by the delta-method variance.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import likelihoods as lk
from . import reparam
from .bayes_factor import (
    BfEstimate,
    BfForm,
    bf_inverse_mean,
    bf_posterior_mean,
    bf_prior_form,
    credible_interval,
    log_lr_series,
    posterior_sd_lr,
)
from .sampler import ChainConfig, PosteriorDraws, PriorSpec, gibbs_cs, gibbs_ss
from .types import (
    BackgroundDatabase,
    CommonSourceParams,
    DimensionMismatchError,
    ForensicBfError,
    Framework,
    InvalidParameterError,
    JointParams,
    Model,
    NonConvergenceError,
    ObservationSet,
    SingularHessianError,
    as_framework,
    as_model,
)

__all__ = [
    "TrueModelSpec",
    "generate_synthetic",
    "true_lr",
    "true_log_lr",
    "FullDataContext",
    "mle_fit",
    "observed_info_inverse",
    "bvm_normality_check",
    "ReplicateRecord",
    "CoverageRecord",
    "NormalityRecord",
    "ConsistencyResult",
    "CoverageResult",
    "NormalityResult",
    "consistency_experiment",
    "coverage_experiment",
    "normality_experiment",
]

THREAD_CAP_ENV = "FORENSIC_BF_THREADS"


def _observation_hash(x: ObservationSet) -> str:
    digest = hashlib.sha256()
    digest.update(str(x.items.shape).encode())
    digest.update(np.ascontiguousarray(x.items).tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class TrueModelSpec:
    """Data-generating truth with byte-frozen unknown-source observations.

    ``theta0`` is the generating parameter (joint for specific-source),
    ``gen_model`` the model under which the frozen sets were drawn.
    ``x_b`` is frozen only in the common-source framework; for
    specific-source the subject data grows with the schedule instead.
    """

    framework: Framework
    theta0: object
    gen_model: Model
    x_c: ObservationSet
    x_b: ObservationSet = None
    n_w: int = 5

    def __post_init__(self):
        object.__setattr__(self, "framework", as_framework(self.framework))
        object.__setattr__(self, "gen_model", as_model(self.gen_model))
        if self.framework is Framework.COMMON_SOURCE:
            if not isinstance(self.theta0, CommonSourceParams):
                raise InvalidParameterError(
                    "common-source truth must be a CommonSourceParams record"
                )
            if self.x_b is None:
                raise InvalidParameterError("common-source spec requires frozen x_b")
        else:
            if not isinstance(self.theta0, JointParams):
                raise InvalidParameterError(
                    "specific-source truth must be a JointParams record"
                )
        if self.n_w < 1:
            raise InvalidParameterError("n_w must be >= 1")

    @property
    def theta_a0(self) -> CommonSourceParams:
        if isinstance(self.theta0, JointParams):
            return self.theta0.theta_a
        return self.theta0

    def frozen_hashes(self) -> dict:
        out = {"x_c": _observation_hash(self.x_c)}
        if self.x_b is not None:
            out["x_b"] = _observation_hash(self.x_b)
        return out

    @classmethod
    def generate(
        cls,
        framework,
        theta0,
        gen_model,
        n_b: int,
        n_c: int,
        seed: int,
        n_w: int = 5,
    ) -> "TrueModelSpec":
        """Draw the frozen unknown-source sets once, under ``gen_model``."""
        framework = as_framework(framework)
        gen_model = as_model(gen_model)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
        if framework is Framework.COMMON_SOURCE:
            ta = theta0
            lb = np.linalg.cholesky(ta.sigma_b)
            lw = np.linalg.cholesky(ta.sigma_w)
            if gen_model is Model.M1:
                a_b = ta.mu + lb @ rng.standard_normal(ta.p)
                a_c = a_b
            else:
                a_b = ta.mu + lb @ rng.standard_normal(ta.p)
                a_c = ta.mu + lb @ rng.standard_normal(ta.p)
            x_b = ObservationSet("x_b", a_b + rng.standard_normal((n_b, ta.p)) @ lw.T)
            x_c = ObservationSet("x_c", a_c + rng.standard_normal((n_c, ta.p)) @ lw.T)
            return cls(framework, theta0, gen_model, x_c=x_c, x_b=x_b, n_w=n_w)
        ta = theta0.theta_a
        tb = theta0.theta_b
        if gen_model is Model.M1:
            lwb = np.linalg.cholesky(tb.sigma_wb)
            items = tb.mu_b + rng.standard_normal((n_c, tb.p)) @ lwb.T
        else:
            lb = np.linalg.cholesky(ta.sigma_b)
            lw = np.linalg.cholesky(ta.sigma_w)
            a_c = ta.mu + lb @ rng.standard_normal(ta.p)
            items = a_c + rng.standard_normal((n_c, ta.p)) @ lw.T
        return cls(framework, theta0, gen_model, x_c=ObservationSet("x_c", items), n_w=n_w)


def generate_synthetic(spec: TrueModelSpec, n_a: int, n_b: int, seed: int):
    """Fresh background (and subject) data at the truth; frozen sets reused.

    Returns ``(background, x_b, x_c)``.  ``n_b`` is ignored in the
    common-source framework, where ``x_b`` is frozen in the spec.
    """
    if n_a < 2:
        raise InvalidParameterError(f"need n_a >= 2 background sources, got {n_a}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    ta = spec.theta_a0
    lb = np.linalg.cholesky(ta.sigma_b)
    lw = np.linalg.cholesky(ta.sigma_w)
    effects = ta.mu + rng.standard_normal((n_a, ta.p)) @ lb.T
    sources = tuple(
        ObservationSet(
            f"src{i:06d}",
            effects[i] + rng.standard_normal((spec.n_w, ta.p)) @ lw.T,
        )
        for i in range(n_a)
    )
    db = BackgroundDatabase(sources)
    if spec.framework is Framework.COMMON_SOURCE:
        return db, spec.x_b, spec.x_c
    tb = spec.theta0.theta_b
    lwb = np.linalg.cholesky(tb.sigma_wb)
    x_b = ObservationSet(
        "subject", tb.mu_b + rng.standard_normal((n_b, tb.p)) @ lwb.T
    )
    return db, x_b, spec.x_c


def true_log_lr(spec: TrueModelSpec) -> float:
    """Log likelihood ratio at the data-generating parameter."""
    if spec.framework is Framework.COMMON_SOURCE:
        return lk.lr_cs(spec.x_b, spec.x_c, spec.theta0)
    return lk.lr_ss(spec.x_c, spec.theta0)


def true_lr(spec: TrueModelSpec) -> float:
    """Likelihood ratio at the data-generating parameter (value scale)."""
    return math.exp(true_log_lr(spec))


# --- maximum likelihood and observed information -------------------------------


@dataclass(frozen=True)
class FullDataContext:
    """Log likelihood of the entire dataset under a conditioning model.

    Common-source: background plus the two unknown sets under ``model``.
    Specific-source: background, subject data, and the unknown set
    assigned to the subject (M1) or the population (M2).  Evaluation is
    over unconstrained coordinates.
    """

    framework: Framework
    model: Model
    db: BackgroundDatabase
    x_b: ObservationSet
    x_c: ObservationSet
    _stats: tuple = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "framework", as_framework(self.framework))
        object.__setattr__(self, "model", as_model(self.model))
        counts = np.array([s.n for s in self.db.sources], dtype=float)
        means = np.array([s.items.mean(axis=0) for s in self.db.sources])
        scatters = np.array(
            [float(np.sum((s.items - s.items.mean(axis=0)) ** 2)) for s in self.db.sources]
        )
        object.__setattr__(self, "_stats", (counts, means, scatters))

    @property
    def p(self) -> int:
        return self.db.p

    @property
    def dim(self) -> int:
        if self.framework is Framework.COMMON_SOURCE:
            return reparam.common_dim(self.p)
        return reparam.joint_dim(self.p)

    def _background_log_lik(self, theta_a: CommonSourceParams) -> float:
        counts, means, scatters = self._stats
        if self.p == 1:
            mu = theta_a.mu[0]
            vb = theta_a.sigma_b[0, 0]
            vw = theta_a.sigma_w[0, 0]
            total = vw + counts * vb
            terms = -0.5 * (
                counts * lk.LOG_2PI
                + (counts - 1.0) * math.log(vw)
                + np.log(total)
                + scatters / vw
                + counts * (means[:, 0] - mu) ** 2 / total
            )
            return float(np.sum(terms))
        return sum(
            lk.log_marginal_single_source(s, theta_a) for s in self.db.sources
        )

    def log_lik(self, vec: np.ndarray) -> float:
        if self.framework is Framework.COMMON_SOURCE:
            theta = reparam.unpack_common(vec, self.p)
            return self._background_log_lik(theta) + lk.log_lik_cs(
                self.x_b, self.x_c, theta, self.model
            )
        theta = reparam.unpack_joint(vec, self.p)
        out = self._background_log_lik(theta.theta_a)
        out += lk.log_gaussian_iid(self.x_b, theta.theta_b.mu_b, theta.theta_b.sigma_wb)
        out += lk.log_lik_ss(self.x_c, theta, self.model)
        return out

    def moment_init(self) -> np.ndarray:
        """Moment-based starting point in unconstrained coordinates."""
        counts, means, scatters = self._stats
        mu0 = means.mean(axis=0)
        dof = float(counts.sum() - counts.shape[0])
        vw = np.full((self.p, self.p), 0.0)
        pooled = sum(
            (s.items - s.items.mean(axis=0)).T @ (s.items - s.items.mean(axis=0))
            for s in self.db.sources
        )
        vw = pooled / max(dof, 1.0) + 1e-6 * np.eye(self.p)
        dev = means - mu0
        vb = dev.T @ dev / max(counts.shape[0] - 1, 1) + 1e-6 * np.eye(self.p)
        theta_a = CommonSourceParams(mu=mu0, sigma_b=vb, sigma_w=vw)
        if self.framework is Framework.COMMON_SOURCE:
            return reparam.pack_common(theta_a)
        items = self.x_b.items
        mu_b0 = items.mean(axis=0)
        centered = items - mu_b0
        vwb = centered.T @ centered / max(items.shape[0] - 1, 1) + 1e-6 * np.eye(self.p)
        from .types import SpecificSourceParams

        return reparam.pack_joint(
            JointParams(
                theta_a=theta_a,
                theta_b=SpecificSourceParams(mu_b=mu_b0, sigma_wb=vwb),
            )
        )


def _fd_gradient(fn, x, h_scale=1e-5):
    h = np.maximum(h_scale, h_scale * np.abs(x))
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        hi, lo = x.copy(), x.copy()
        hi[i] += h[i]
        lo[i] -= h[i]
        grad[i] = (fn(hi) - fn(lo)) / (2.0 * h[i])
    return grad


def _fd_hessian(fn, x, h_scale=1e-4):
    d = x.shape[0]
    h = np.maximum(h_scale, h_scale * np.abs(x))
    hess = np.empty((d, d))
    f0 = fn(x)
    for i in range(d):
        for j in range(i, d):
            if i == j:
                hi, lo = x.copy(), x.copy()
                hi[i] += 2 * h[i]
                lo[i] -= 2 * h[i]
                hess[i, i] = (fn(hi) - 2.0 * f0 + fn(lo)) / (4.0 * h[i] ** 2)
            else:
                pp, pm, mp, mm = x.copy(), x.copy(), x.copy(), x.copy()
                pp[[i, j]] += [h[i], h[j]]
                pm[i] += h[i]
                pm[j] -= h[j]
                mp[i] -= h[i]
                mp[j] += h[j]
                mm[[i, j]] -= [h[i], h[j]]
                hess[i, j] = hess[j, i] = (
                    fn(pp) - fn(pm) - fn(mp) + fn(mm)
                ) / (4.0 * h[i] * h[j])
    return hess


def mle_fit(
    context: FullDataContext,
    init: np.ndarray = None,
    gtol: float = 1e-6,
    max_iterations: int = 500,
    free_indices=None,
) -> np.ndarray:
    """Quasi-Newton maximum likelihood fit in unconstrained coordinates.

    BFGS with central-difference gradients, followed by Newton polish
    steps on the finite-difference Hessian.  Converges when the gradient
    infinity norm drops below ``gtol``; once the gradient reaches the
    roundoff floor of central differences (proportional to the log
    likelihood's magnitude) further polishing is numerically meaningless
    and the fit is accepted there.  ``free_indices`` restricts the
    optimization to a coordinate subset (profile fit); the remaining
    coordinates stay at their ``init`` values.
    """
    full = np.array(context.moment_init() if init is None else init, dtype=float)
    if full.shape != (context.dim,):
        raise DimensionMismatchError(
            f"init has shape {full.shape}, expected ({context.dim},)"
        )
    if free_indices is None:
        free = np.arange(context.dim)
    else:
        free = np.asarray(free_indices, dtype=int)

    def negative(v):
        x = full.copy()
        x[free] = v
        return -context.log_lik(x)

    result = optimize.minimize(
        negative,
        full[free],
        method="BFGS",
        jac="3-point",
        options={"gtol": gtol, "maxiter": max_iterations},
    )
    best = np.asarray(result.x, dtype=float)
    value = float(result.fun)
    noise_floor = max(gtol, 5.0 * (1.0 + abs(value)) * np.finfo(float).eps / 1e-5)
    grad = _fd_gradient(negative, best)
    for _ in range(8):
        if float(np.max(np.abs(grad))) <= max(gtol, noise_floor):
            break
        hess = _fd_hessian(negative, best)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        candidate = best - step
        cand_value = negative(candidate)
        if not (np.all(np.isfinite(candidate)) and cand_value <= value + 1e-9):
            break
        best, value = candidate, cand_value
        grad = _fd_gradient(negative, best)
    grad_norm = float(np.max(np.abs(grad)))
    if grad_norm > max(gtol, noise_floor):
        raise NonConvergenceError(
            f"MLE did not converge: {result.message} (|grad|_inf={grad_norm:.3e})",
            trace=result,
        )
    out = full.copy()
    out[free] = best
    return out


def observed_info_inverse(
    theta_hat: np.ndarray, context: FullDataContext, step: float = 1e-4
) -> np.ndarray:
    """Inverse of the observed information at the fitted parameter.

    The Hessian of the full-data log likelihood is formed by central
    finite differences in unconstrained coordinates with per-coordinate
    steps ``max(step, step * |theta_i|)``, symmetrized, negated, and
    inverted through a Cholesky factorization.  A non-positive-definite
    result raises :class:`SingularHessianError` carrying the smallest
    eigenvalue.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    d = theta_hat.shape[0]
    if theta_hat.shape != (context.dim,):
        raise DimensionMismatchError(
            f"theta_hat has shape {theta_hat.shape}, expected ({context.dim},)"
        )
    h = np.maximum(step, step * np.abs(theta_hat))
    hessian = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            if i == j:
                f0 = context.log_lik(theta_hat)
                hi = theta_hat.copy()
                lo = theta_hat.copy()
                hi[i] += 2 * h[i]
                lo[i] -= 2 * h[i]
                hessian[i, i] = (
                    context.log_lik(hi) - 2.0 * f0 + context.log_lik(lo)
                ) / (4.0 * h[i] ** 2)
            else:
                pp = theta_hat.copy()
                pm = theta_hat.copy()
                mp = theta_hat.copy()
                mm = theta_hat.copy()
                pp[[i, j]] += [h[i], h[j]]
                pm[i] += h[i]
                pm[j] -= h[j]
                mp[i] -= h[i]
                mp[j] += h[j]
                mm[[i, j]] -= [h[i], h[j]]
                hessian[i, j] = hessian[j, i] = (
                    context.log_lik(pp)
                    - context.log_lik(pm)
                    - context.log_lik(mp)
                    + context.log_lik(mm)
                ) / (4.0 * h[i] * h[j])
    info = -0.5 * (hessian + hessian.T)
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        min_eig = float(np.min(np.linalg.eigvalsh(info)))
        raise SingularHessianError(
            f"observed information is not positive definite "
            f"(smallest eigenvalue {min_eig:.3e})",
            min_eigenvalue=min_eig,
        ) from None
    identity = np.eye(d)
    half = np.linalg.solve(chol, identity)
    return half.T @ half


def bvm_normality_check(
    draws: PosteriorDraws, x_c: ObservationSet, x_b: ObservationSet = None
) -> float:
    """Kolmogorov-Smirnov distance of standardized LR draws to N(0, 1).

    LR values over the M2-conditioned posterior are centered and scaled
    by their sample mean and standard deviation; a degenerate (zero
    variance) series returns 1.0.
    """
    from .bayes_factor import _require_tag

    _require_tag(draws, Model.M2, "bvm_normality_check")
    if draws.n_draws < 1000:
        raise InvalidParameterError("normality check needs at least 1000 draws")
    log_lr = log_lr_series(draws, x_c, x_b)
    lam = np.exp(log_lr - np.max(log_lr))
    sd = float(np.std(lam, ddof=1))
    if sd == 0.0:
        return 1.0
    z = (lam - float(np.mean(lam))) / sd
    return float(stats.kstest(z, "norm").statistic)


# --- experiment harness ---------------------------------------------------------


@dataclass(frozen=True)
class ReplicateRecord:
    n: int
    replicate: int
    log_bf: float
    bf: float
    mc_standard_error: float
    true_lr: float
    abs_rel_error: float
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class CoverageRecord:
    n: int
    replicate: int
    alpha: float
    bf: float
    sigma_n: float
    lower: float
    upper: float
    posterior_prob: float
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class NormalityRecord:
    n: int
    replicate: int
    ks_statistic: float
    max_log_lr: float
    failed: bool = False
    error: str = ""


def _summary_quantiles(values):
    arr = np.asarray(values, dtype=float)
    return {
        "median": float(np.median(arr)),
        "q25": float(np.quantile(arr, 0.25)),
        "q75": float(np.quantile(arr, 0.75)),
    }


@dataclass(frozen=True)
class ConsistencyResult:
    schedule: tuple
    replicates: int
    form: BfForm
    rows: tuple
    frozen_hashes: dict

    def __post_init__(self):
        sched = tuple(int(n) for n in self.schedule)
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise InvalidParameterError("schedule must be strictly increasing")
        if self.replicates < 20:
            raise InvalidParameterError("consistency experiments need >= 20 replicates")
        object.__setattr__(self, "schedule", sched)

    def summary(self) -> list:
        out = []
        for n in self.schedule:
            ok = [r for r in self.rows if r.n == n and not r.failed]
            failed = sum(1 for r in self.rows if r.n == n and r.failed)
            entry = {"n": n, "replicates": len(ok), "failed": failed}
            if ok:
                entry.update(
                    {
                        f"abs_rel_error_{k}": v
                        for k, v in _summary_quantiles(
                            [r.abs_rel_error for r in ok]
                        ).items()
                    }
                )
            out.append(entry)
        return out

    def median_errors(self) -> list:
        return [s.get("abs_rel_error_median", math.nan) for s in self.summary()]


@dataclass(frozen=True)
class CoverageResult:
    schedule: tuple
    replicates: int
    alphas: tuple
    rows: tuple
    frozen_hashes: dict

    def summary(self) -> list:
        out = []
        for n in self.schedule:
            for alpha in self.alphas:
                ok = [
                    r
                    for r in self.rows
                    if r.n == n and r.alpha == alpha and not r.failed
                ]
                failed = sum(
                    1 for r in self.rows if r.n == n and r.alpha == alpha and r.failed
                )
                entry = {"n": n, "alpha": alpha, "replicates": len(ok), "failed": failed}
                if ok:
                    entry["mean_posterior_prob"] = float(
                        np.mean([r.posterior_prob for r in ok])
                    )
                out.append(entry)
        return out


@dataclass(frozen=True)
class NormalityResult:
    schedule: tuple
    replicates: int
    rows: tuple
    frozen_hashes: dict

    def summary(self) -> list:
        out = []
        for n in self.schedule:
            ok = [r for r in self.rows if r.n == n and not r.failed]
            failed = sum(1 for r in self.rows if r.n == n and r.failed)
            entry = {"n": n, "replicates": len(ok), "failed": failed}
            if ok:
                entry["mean_ks_statistic"] = float(
                    np.mean([r.ks_statistic for r in ok])
                )
                entry["median_ks_statistic"] = float(
                    np.median([r.ks_statistic for r in ok])
                )
            out.append(entry)
        return out


def _resolve_workers(workers) -> int:
    cap = os.environ.get(THREAD_CAP_ENV)
    cap = int(cap) if cap else None
    if workers is None:
        workers = cap if cap is not None else 1
    if cap is not None:
        workers = min(workers, cap)
    return max(1, int(workers))


def _replicate_seeds(seed: int, n: int, replicate: int):
    """Per-(n, replicate) data and chain seeds, independent of the schedule.

    Keying the stream by (n, replicate) makes every replicate's result
    invariant to how the schedule is partitioned across calls.
    """
    child = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(n), int(replicate)))
    data_seed, chain_seed = child.generate_state(2, dtype=np.uint64)
    return int(data_seed), int(chain_seed)


def _sample_m_tagged(spec, db, x_b, x_c, prior, chain, model):
    if spec.framework is Framework.COMMON_SOURCE:
        return gibbs_cs(db, x_b, x_c, prior, model, chain)
    return gibbs_ss(db, x_b, x_c, prior, model, chain)


def _estimate_bf(spec, db, x_b, x_c, prior, chain, form: BfForm) -> BfEstimate:
    if form is BfForm.POSTERIOR_MEAN_M2:
        draws = _sample_m_tagged(spec, db, x_b, x_c, prior, chain, Model.M2)
        return bf_posterior_mean(draws, x_c, x_b, min_draws=chain.min_draws)
    if form is BfForm.INVERSE_MEAN_M1:
        draws = _sample_m_tagged(spec, db, x_b, x_c, prior, chain, Model.M1)
        return bf_inverse_mean(draws, x_c, x_b, min_draws=chain.min_draws)
    return bf_prior_form(
        prior,
        db,
        x_b,
        x_c,
        spec.framework,
        n_draws=chain.kept_total,
        seed=chain.seed,
        min_draws=chain.min_draws,
    )


def _consistency_job(args):
    spec, prior, chain, form, n, replicate, data_seed, chain_seed = args
    log_lam0 = true_log_lr(spec)
    lam0 = math.exp(log_lam0)
    try:
        db, x_b, x_c = generate_synthetic(spec, n_a=n, n_b=n, seed=data_seed)
        est = _estimate_bf(spec, db, x_b, x_c, prior, chain.replace(seed=chain_seed), form)
        abs_rel = abs(math.expm1(est.log_value - log_lam0))
        return ReplicateRecord(
            n=n,
            replicate=replicate,
            log_bf=est.log_value,
            bf=est.value,
            mc_standard_error=est.mc_standard_error,
            true_lr=lam0,
            abs_rel_error=abs_rel,
        )
    except ForensicBfError as exc:
        return ReplicateRecord(
            n=n,
            replicate=replicate,
            log_bf=math.nan,
            bf=math.nan,
            mc_standard_error=math.nan,
            true_lr=lam0,
            abs_rel_error=math.nan,
            failed=True,
            error=str(exc),
        )


def _coverage_job(args):
    spec, prior, chain, alphas, n, replicate, data_seed, chain_seed = args
    try:
        db, x_b, x_c = generate_synthetic(spec, n_a=n, n_b=n, seed=data_seed)
        draws = _sample_m_tagged(
            spec, db, x_b, x_c, prior, chain.replace(seed=chain_seed), Model.M2
        )
        est = bf_posterior_mean(draws, x_c, x_b, min_draws=chain.min_draws)
        sigma_n = posterior_sd_lr(draws, x_c, x_b)
        log_lr = log_lr_series(draws, x_c, x_b)
        lam = np.exp(log_lr)
        records = []
        for alpha in alphas:
            interval = credible_interval(est.value, sigma_n, alpha)
            prob = float(np.mean((lam >= interval.lower) & (lam <= interval.upper)))
            records.append(
                CoverageRecord(
                    n=n,
                    replicate=replicate,
                    alpha=alpha,
                    bf=est.value,
                    sigma_n=sigma_n,
                    lower=interval.lower,
                    upper=interval.upper,
                    posterior_prob=prob,
                )
            )
        return records
    except ForensicBfError as exc:
        return [
            CoverageRecord(
                n=n,
                replicate=replicate,
                alpha=alpha,
                bf=math.nan,
                sigma_n=math.nan,
                lower=math.nan,
                upper=math.nan,
                posterior_prob=math.nan,
                failed=True,
                error=str(exc),
            )
            for alpha in alphas
        ]


def _normality_job(args):
    spec, prior, chain, n, replicate, data_seed, chain_seed = args
    try:
        db, x_b, x_c = generate_synthetic(spec, n_a=n, n_b=n, seed=data_seed)
        draws = _sample_m_tagged(
            spec, db, x_b, x_c, prior, chain.replace(seed=chain_seed), Model.M2
        )
        statistic = bvm_normality_check(draws, x_c, x_b)
        max_log_lr = float(np.max(log_lr_series(draws, x_c, x_b)))
        return NormalityRecord(
            n=n, replicate=replicate, ks_statistic=statistic, max_log_lr=max_log_lr
        )
    except ForensicBfError as exc:
        return NormalityRecord(
            n=n,
            replicate=replicate,
            ks_statistic=math.nan,
            max_log_lr=math.nan,
            failed=True,
            error=str(exc),
        )


def _run_jobs(worker, jobs, workers):
    workers = _resolve_workers(workers)
    if workers <= 1 or len(jobs) <= 1:
        return [worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs, chunksize=1))


def _validate_schedule(schedule):
    sched = tuple(int(n) for n in schedule)
    if len(sched) == 0 or any(b <= a for a, b in zip(sched, sched[1:])):
        raise InvalidParameterError("schedule must be non-empty and strictly increasing")
    return sched


def consistency_experiment(
    spec: TrueModelSpec,
    schedule,
    replicates: int,
    form: BfForm,
    prior: PriorSpec,
    chain: ChainConfig,
    seed: int,
    workers: int = None,
) -> ConsistencyResult:
    """Bayes-factor error against the true LR along a background schedule.

    For each n and replicate a fresh background (and subject sample,
    coupled as n_b = n_a) is generated while the unknown-source sets
    stay frozen; the requested estimator form is run and its absolute
    relative error |BF / LR(theta_0) - 1| recorded.  Failed replicates
    are marked, counted, and skipped by the summaries.
    """
    schedule = _validate_schedule(schedule)
    form = BfForm(form)
    jobs = []
    for n in schedule:
        for r in range(replicates):
            data_seed, chain_seed = _replicate_seeds(seed, n, r)
            jobs.append((spec, prior, chain, form, n, r, data_seed, chain_seed))
    rows = _run_jobs(_consistency_job, jobs, workers)
    return ConsistencyResult(
        schedule=schedule,
        replicates=replicates,
        form=form,
        rows=tuple(rows),
        frozen_hashes=spec.frozen_hashes(),
    )


def coverage_experiment(
    spec: TrueModelSpec,
    schedule,
    replicates: int,
    alpha,
    prior: PriorSpec,
    chain: ChainConfig,
    seed: int,
    workers: int = None,
) -> CoverageResult:
    """Posterior mass of the LR interval along a background schedule.

    Per replicate, the interval is built from the M2-draw Bayes factor
    and LR posterior spread, and the posterior probability that the LR
    falls inside is estimated as the fraction of M2 draws whose LR value
    lands in the interval.  ``alpha`` may be a float or a sequence; all
    levels reuse the same draws.
    """
    schedule = _validate_schedule(schedule)
    alphas = tuple(float(a) for a in (alpha if np.iterable(alpha) else [alpha]))
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {a}")
    jobs = []
    for n in schedule:
        for r in range(replicates):
            data_seed, chain_seed = _replicate_seeds(seed, n, r)
            jobs.append((spec, prior, chain, alphas, n, r, data_seed, chain_seed))
    nested = _run_jobs(_coverage_job, jobs, workers)
    rows = tuple(record for group in nested for record in group)
    return CoverageResult(
        schedule=schedule,
        replicates=replicates,
        alphas=alphas,
        rows=rows,
        frozen_hashes=spec.frozen_hashes(),
    )


def normality_experiment(
    spec: TrueModelSpec,
    schedule,
    replicates: int,
    prior: PriorSpec,
    chain: ChainConfig,
    seed: int,
    workers: int = None,
) -> NormalityResult:
    """KS distance of the standardized LR posterior along a schedule.

    The recorded ``max_log_lr`` per replicate is a diagnostic for the
    neighborhood-boundedness hypothesis of the consistency statements;
    it is reported, not asserted.
    """
    schedule = _validate_schedule(schedule)
    jobs = []
    for n in schedule:
        for r in range(replicates):
            data_seed, chain_seed = _replicate_seeds(seed, n, r)
            jobs.append((spec, prior, chain, n, r, data_seed, chain_seed))
    rows = _run_jobs(_normality_job, jobs, workers)
    return NormalityResult(
        schedule=schedule,
        replicates=replicates,
        rows=tuple(rows),
        frozen_hashes=spec.frozen_hashes(),
    )
