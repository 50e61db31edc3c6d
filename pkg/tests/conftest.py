import numpy as np
import pytest

from forensic_bf.sampler import InverseWishartPrior, MeanPrior, PriorSpec
from forensic_bf.types import BackgroundDatabase, ObservationSet


def make_background(
    rng, n_a, n_w=5, mu=0.0, var_b=1.0, var_w=1.0, label_prefix="src"
) -> BackgroundDatabase:
    """Univariate hierarchical background data at the given truth."""
    sources = []
    for i in range(n_a):
        effect = rng.normal(mu, np.sqrt(var_b))
        items = rng.normal(effect, np.sqrt(var_w), size=n_w)
        sources.append(ObservationSet(f"{label_prefix}{i:05d}", items))
    return BackgroundDatabase(tuple(sources))


def standard_prior(subject=True) -> PriorSpec:
    """Weakly informative univariate prior with unit-scale covariance means."""
    return PriorSpec(
        mean=MeanPrior(m0=[0.0], V0=[[4.0]]),
        between=InverseWishartPrior(nu=5.0, scale=[[3.0]]),
        within=InverseWishartPrior(nu=5.0, scale=[[3.0]]),
        subject_mean=MeanPrior(m0=[0.0], V0=[[4.0]]) if subject else None,
        subject_within=InverseWishartPrior(nu=5.0, scale=[[3.0]]) if subject else None,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
