"""Core data types for the two source-attribution model selection problems.

Observations are feature vectors of a common dimension ``p`` (rows of an
``(n, p)`` array).  A background database collects observation sets from
many known sources; the unknown-source material is one or two further
observation sets.  Parameter records describe the hierarchical Gaussian
population model: a latent per-source effect ``a ~ N(mu, sigma_b)`` and
items ``x | a ~ N(a, sigma_w)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

#: Absolute tolerance for covariance symmetry checks.
SYMMETRY_TOL = 1e-10


class ForensicBfError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(ForensicBfError):
    """A parameter record violates positive definiteness or symmetry."""


class DimensionMismatchError(ForensicBfError):
    """Inputs do not share a common feature dimension."""


class ModelTagError(ForensicBfError):
    """Posterior draws are tagged with the wrong conditioning model."""


class ChainFailureError(ForensicBfError):
    """A sampling chain could not be run or produced invalid state."""


class NonConvergenceError(ForensicBfError):
    """An iterative optimizer failed to converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class SingularHessianError(ForensicBfError):
    """The observed information matrix is not positive definite."""

    def __init__(self, message, min_eigenvalue):
        super().__init__(message)
        self.min_eigenvalue = float(min_eigenvalue)


class Model(str, Enum):
    """The two competing models: one shared origin (M1) or two (M2).

    Common-source: M1 = both unknown sets from one unspecified population
    source, M2 = two different unspecified sources.  Specific-source:
    M1 = the unknown set comes from the designated subject, M2 = from a
    random population member.
    """

    M1 = "M1"
    M2 = "M2"


class Framework(str, Enum):
    COMMON_SOURCE = "common-source"
    SPECIFIC_SOURCE = "specific-source"


def as_model(value) -> Model:
    if isinstance(value, Model):
        return value
    return Model(str(value))


def as_framework(value) -> Framework:
    if isinstance(value, Framework):
        return value
    return Framework(str(value))


def _as_feature_matrix(items) -> np.ndarray:
    arr = np.asarray(items, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatchError(
            f"observation items must be an (n, p) array, got shape {arr.shape}"
        )
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatchError("observation set must be non-empty with p >= 1")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("observation items contain non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """A set of feature vectors attributed to one (possibly unknown) source.

    Parameters
    ----------
    label : str
        Identifier (source id for background sources, free text otherwise).
    items : array_like
        ``(n, p)`` array, one feature vector per row.  A 1-D array is
        interpreted as ``n`` univariate observations.
    """

    label: str
    items: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "items", _as_feature_matrix(self.items))

    @property
    def n(self) -> int:
        return self.items.shape[0]

    @property
    def p(self) -> int:
        return self.items.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ObservationSet):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.items, other.items)

    def __repr__(self):
        return f"ObservationSet(label={self.label!r}, n={self.n}, p={self.p})"


@dataclass(frozen=True, eq=False)
class BackgroundDatabase:
    """Observation sets from ``N_a >= 2`` distinct known sources."""

    sources: tuple

    def __post_init__(self):
        sources = tuple(self.sources)
        if len(sources) < 2:
            raise InvalidParameterError(
                f"background database needs at least 2 sources, got {len(sources)}"
            )
        labels = [s.label for s in sources]
        if len(set(labels)) != len(labels):
            raise InvalidParameterError("duplicate source ids in background database")
        dims = {s.p for s in sources}
        if len(dims) != 1:
            raise DimensionMismatchError(
                f"background sources disagree on feature dimension: {sorted(dims)}"
            )
        object.__setattr__(self, "sources", sources)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def p(self) -> int:
        return self.sources[0].p

    @property
    def counts(self) -> tuple:
        """Items per source, in source order."""
        return tuple(s.n for s in self.sources)

    @property
    def total_items(self) -> int:
        return sum(self.counts)

    @property
    def source_ids(self) -> tuple:
        return tuple(s.label for s in self.sources)

    def __eq__(self, other):
        if not isinstance(other, BackgroundDatabase):
            return NotImplemented
        return self.sources == other.sources

    def __repr__(self):
        return (
            f"BackgroundDatabase(n_sources={self.n_sources}, p={self.p}, "
            f"total_items={self.total_items})"
        )


def _check_covariance(name: str, matrix: np.ndarray, p: int) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.shape != (p, p):
        raise DimensionMismatchError(f"{name} must be {p}x{p}, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(m))):
        raise InvalidParameterError(f"{name} is not symmetric within {SYMMETRY_TOL}")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameterError(f"{name} is not positive definite") from exc
    return m


def _as_mean(name: str, vec, p=None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(vec, dtype=float))
    if v.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a vector, got shape {v.shape}")
    if p is not None and v.shape[0] != p:
        raise DimensionMismatchError(f"{name} has dimension {v.shape[0]}, expected {p}")
    if not np.all(np.isfinite(v)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True, eq=False)
class CommonSourceParams:
    """Population parameters: source-effect mean and the two covariances.

    ``mu`` is the mean of the latent source effect, ``sigma_b`` its
    between-source covariance, and ``sigma_w`` the within-source
    covariance of items around their source effect.  Both covariance
    matrices must be symmetric positive definite.
    """

    mu: np.ndarray
    sigma_b: np.ndarray
    sigma_w: np.ndarray

    def __post_init__(self):
        mu = _as_mean("mu", self.mu)
        p = mu.shape[0]
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_b", _check_covariance("sigma_b", self.sigma_b, p))
        object.__setattr__(self, "sigma_w", _check_covariance("sigma_w", self.sigma_w, p))

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CommonSourceParams):
            return NotImplemented
        return (
            np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma_b, other.sigma_b)
            and np.array_equal(self.sigma_w, other.sigma_w)
        )


@dataclass(frozen=True, eq=False)
class SpecificSourceParams:
    """Parameters of a designated subject's own population."""

    mu_b: np.ndarray
    sigma_wb: np.ndarray

    def __post_init__(self):
        mu_b = _as_mean("mu_b", self.mu_b)
        p = mu_b.shape[0]
        object.__setattr__(self, "mu_b", mu_b)
        object.__setattr__(
            self, "sigma_wb", _check_covariance("sigma_wb", self.sigma_wb, p)
        )

    @property
    def p(self) -> int:
        return self.mu_b.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SpecificSourceParams):
            return NotImplemented
        return np.array_equal(self.mu_b, other.mu_b) and np.array_equal(
            self.sigma_wb, other.sigma_wb
        )


@dataclass(frozen=True, eq=False)
class JointParams:
    """Joint parameter for the specific-source problem."""

    theta_a: CommonSourceParams
    theta_b: SpecificSourceParams

    def __post_init__(self):
        if self.theta_a.p != self.theta_b.p:
            raise DimensionMismatchError(
                f"theta_a has p={self.theta_a.p} but theta_b has p={self.theta_b.p}"
            )

    @property
    def p(self) -> int:
        return self.theta_a.p

    def __eq__(self, other):
        if not isinstance(other, JointParams):
            return NotImplemented
        return self.theta_a == other.theta_a and self.theta_b == other.theta_b


def concat_sets(a: ObservationSet, b: ObservationSet, label: str = None) -> ObservationSet:
    """Pool two observation sets into one (shared-origin hypothesis)."""
    if a.p != b.p:
        raise DimensionMismatchError(f"cannot pool sets with p={a.p} and p={b.p}")
    if label is None:
        label = f"{a.label}+{b.label}"
    return ObservationSet(label, np.vstack([a.items, b.items]))
