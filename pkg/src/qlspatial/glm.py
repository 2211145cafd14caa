"""Marginal logistic model with binary covariates."""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class DesignError(ValueError):
    """The design matrix is malformed or not of full column rank."""


def theta(T: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Marginal probabilities ``exp(t_i beta) / (1 + exp(t_i beta))``.

    ``expit`` evaluates the sign-split form, so large ``|t_i beta|`` does not
    overflow.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    beta = np.asarray(beta, dtype=float)
    if T.shape[1] != beta.shape[0]:
        raise ValueError(f"design has {T.shape[1]} columns but beta has {beta.shape[0]} entries")
    return expit(T @ beta)


def derivative_matrix(T: np.ndarray, theta_: np.ndarray) -> np.ndarray:
    """``d theta / d beta``: row ``i`` is ``theta_i (1 - theta_i) t_i``."""
    T = np.asarray(T, dtype=float)
    var = theta_ * (1.0 - theta_)
    return T * var[:, None]


def build_conditional_design(x) -> np.ndarray:
    """Rows ``(1, x_i)`` for the model ``logit P(Y_i = 1 | X_i = x_i) = b0 + b1 x_i``."""
    x = np.asarray(x).ravel()
    if not np.all(np.isin(x, (0, 1))):
        bad = x[~np.isin(x, (0, 1))][0]
        raise DesignError(f"covariate values must be 0 or 1, found {bad!r}")
    return np.column_stack([np.ones(x.size), x.astype(float)])


def check_design(T: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Validate a design matrix and return it as a float array.

    Requires an all-ones first column, 0/1 entries and full column rank,
    where singular values below ``rtol`` times the largest count as zero.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if T.shape[0] < T.shape[1]:
        raise DesignError(f"design has more columns ({T.shape[1]}) than rows ({T.shape[0]})")
    if not np.all(T[:, 0] == 1):
        raise DesignError("first design column must be all ones")
    if not np.all((T == 0) | (T == 1)):
        raise DesignError("design entries must be 0 or 1")
    s = np.linalg.svd(T, compute_uv=False)
    rank = int(np.sum(s > rtol * s[0]))
    if rank < T.shape[1]:
        raise DesignError(f"design matrix is rank deficient (rank {rank} < {T.shape[1]} columns)")
    return T
