"""Unconstrained reparameterization of the model parameters.

Means map to themselves; covariance matrices map to the lower-triangular
Cholesky factor with a log transform on the diagonal (log-Cholesky).  Any
real vector therefore decodes to a valid positive definite matrix, so
finite-difference schemes never leave the parameter space.
"""

from __future__ import annotations

import numpy as np

from .types import (
    CommonSourceParams,
    DimensionMismatchError,
    JointParams,
    SpecificSourceParams,
)


def cov_dim(p: int) -> int:
    """Number of free coordinates of a p x p covariance matrix."""
    return p * (p + 1) // 2


def common_dim(p: int) -> int:
    """Unconstrained dimension of a common-source parameter record."""
    return p + 2 * cov_dim(p)


def joint_dim(p: int) -> int:
    """Unconstrained dimension of a joint (specific-source) record."""
    return common_dim(p) + p + cov_dim(p)


def pack_cov(matrix: np.ndarray) -> np.ndarray:
    """Encode an SPD matrix as its log-Cholesky coordinates."""
    L = np.linalg.cholesky(np.asarray(matrix, dtype=float))
    p = L.shape[0]
    out = np.empty(cov_dim(p))
    k = 0
    for i in range(p):
        for j in range(i + 1):
            out[k] = np.log(L[i, i]) if i == j else L[i, j]
            k += 1
    return out


def unpack_cov(coords: np.ndarray, p: int) -> np.ndarray:
    """Decode log-Cholesky coordinates back to an SPD matrix."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape != (cov_dim(p),):
        raise DimensionMismatchError(
            f"expected {cov_dim(p)} covariance coordinates, got shape {coords.shape}"
        )
    L = np.zeros((p, p))
    k = 0
    for i in range(p):
        for j in range(i + 1):
            L[i, j] = np.exp(coords[k]) if i == j else coords[k]
            k += 1
    return L @ L.T


def pack_common(theta: CommonSourceParams) -> np.ndarray:
    q = cov_dim(theta.p)
    out = np.empty(common_dim(theta.p))
    out[: theta.p] = theta.mu
    out[theta.p : theta.p + q] = pack_cov(theta.sigma_b)
    out[theta.p + q :] = pack_cov(theta.sigma_w)
    return out


def unpack_common(vec: np.ndarray, p: int) -> CommonSourceParams:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (common_dim(p),):
        raise DimensionMismatchError(
            f"expected {common_dim(p)} coordinates, got shape {vec.shape}"
        )
    q = cov_dim(p)
    return CommonSourceParams(
        mu=vec[:p],
        sigma_b=unpack_cov(vec[p : p + q], p),
        sigma_w=unpack_cov(vec[p + q :], p),
    )


def pack_joint(theta: JointParams) -> np.ndarray:
    p = theta.p
    out = np.empty(joint_dim(p))
    d = common_dim(p)
    out[:d] = pack_common(theta.theta_a)
    out[d : d + p] = theta.theta_b.mu_b
    out[d + p :] = pack_cov(theta.theta_b.sigma_wb)
    return out


def unpack_joint(vec: np.ndarray, p: int) -> JointParams:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (joint_dim(p),):
        raise DimensionMismatchError(
            f"expected {joint_dim(p)} coordinates, got shape {vec.shape}"
        )
    d = common_dim(p)
    theta_a = unpack_common(vec[:d], p)
    theta_b = SpecificSourceParams(
        mu_b=vec[d : d + p], sigma_wb=unpack_cov(vec[d + p :], p)
    )
    return JointParams(theta_a=theta_a, theta_b=theta_b)
