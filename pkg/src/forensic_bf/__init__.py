"""Bayes factors, likelihood ratios, and LR credible intervals for the
common-source and specific-source model selection problems under
hierarchical Gaussian models."""

from .bayes_factor import (
    BfEstimate,
    BfForm,
    LrInterval,
    bf_inverse_mean,
    bf_posterior_mean,
    bf_prior_form,
    credible_interval,
    delta_method_variance,
    posterior_odds,
    posterior_sd_lr,
)
from .likelihoods import (
    LrContext,
    log_lik_cs,
    log_lik_ss,
    log_marginal_single_source,
    lr_cs,
    lr_gradient,
    lr_ss,
)
from .sampler import (
    ChainConfig,
    ConditioningModel,
    InverseWishartPrior,
    MeanPrior,
    PosteriorDraws,
    PriorSpec,
    derive_prior,
    ess,
    gibbs_background,
    gibbs_cs,
    gibbs_ss,
    gibbs_subject,
)
from .types import (
    BackgroundDatabase,
    ChainFailureError,
    CommonSourceParams,
    DimensionMismatchError,
    ForensicBfError,
    Framework,
    InvalidParameterError,
    JointParams,
    Model,
    ModelTagError,
    NonConvergenceError,
    ObservationSet,
    SingularHessianError,
    SpecificSourceParams,
)

__version__ = "0.1.0"
