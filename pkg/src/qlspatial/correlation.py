"""Exponential spatial correlation matrices and their inverses.

Correlations follow ``gamma_ij = a * rho ** d(s_i, s_j)`` off the diagonal.
With ``a = 1`` and the L1 metric the matrix factors as ``Omega_n kron
Omega_m`` where ``Omega_k`` is the AR(1) matrix ``rho ** |i - j|``; its
inverse is then the Kronecker product of two tridiagonal matrices, so
solves cost O(N). Every other configuration goes through a dense Cholesky
factorization that is computed once and cached.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .lattice import Lattice

KRONECKER = "kronecker-L1-unit-a"
DENSE = "dense"


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A correlation matrix failed its Cholesky factorization."""

    def __init__(self, pivot: int, what: str = "correlation matrix"):
        self.pivot = pivot
        super().__init__(f"{what} is not positive definite (Cholesky pivot {pivot} failed)")


@dataclass(frozen=True)
class CorrelationModel:
    a: float = 1.0
    rho: float = 0.5
    metric: float = 1

    def __post_init__(self):
        if not 0 < self.a <= 1:
            raise ValueError(f"scale constant a must lie in (0, 1], got {self.a}")
        if not 0 <= self.rho <= 1:
            raise ValueError(f"decay rate rho must lie in [0, 1], got {self.rho}")
        if self.metric < 1:
            raise ValueError(f"metric order must be >= 1, got {self.metric}")

    @property
    def is_structured(self) -> bool:
        return self.a == 1 and self.metric == 1

    def correlation(self, d):
        d = np.asarray(d, dtype=float)
        return np.where(d == 0, 1.0, self.a * _power(self.rho, d))


def _power(rho: float, d: np.ndarray) -> np.ndarray:
    # 0 ** 0 must stay 1 on the diagonal; callers mask it anyway
    with np.errstate(divide="ignore"):
        return np.power(rho, d)


def cholesky_or_raise(matrix: np.ndarray, what: str = "correlation matrix") -> np.ndarray:
    """Lower Cholesky factor, raising :class:`NotPositiveDefiniteError` with the failing pivot."""
    (potrf,) = scipy.linalg.get_lapack_funcs(("potrf",), (matrix,))
    factor, info = potrf(matrix, lower=True, clean=True, overwrite_a=False)
    if info > 0:
        raise NotPositiveDefiniteError(int(info), what)
    if info < 0:
        raise ValueError(f"invalid argument {-info} passed to potrf")
    return factor


@dataclass
class CorrelationMatrix:
    """Dense correlation matrix plus a cached solver.

    ``structure`` is :data:`KRONECKER` when the exact sparse inverse is
    available and :data:`DENSE` otherwise.
    """

    gamma: np.ndarray
    structure: str = DENSE
    lattice: Lattice | None = None
    rho: float | None = None
    _inverse: sp.csr_matrix | None = field(default=None, repr=False)
    _chol: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.gamma.shape[0]

    def factorize(self) -> None:
        if self.structure == KRONECKER:
            if self._inverse is None:
                self._inverse = gamma_inverse_structured(self.lattice, self.rho, sparse=True)
        elif self._chol is None:
            self._chol = cholesky_or_raise(self.gamma)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return ``x`` with ``gamma @ x = rhs``."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.size:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix is {self.size}x{self.size}")
        self.factorize()
        if self.structure == KRONECKER:
            return np.asarray(self._inverse @ rhs)
        return scipy.linalg.cho_solve((self._chol, True), rhs, check_finite=False)

    def inverse(self) -> np.ndarray:
        """Explicit inverse; for diagnostics and small matrices only."""
        return self.solve(np.eye(self.size))

    @classmethod
    def identity(cls, size: int) -> "CorrelationMatrix":
        return cls(np.eye(size), DENSE)


def omega_inverse(n: int, rho: float) -> np.ndarray:
    """Closed-form inverse of the ``n x n`` AR(1) matrix with entries ``rho**|i-j|``.

    The result is tridiagonal: corner diagonal entries 1, interior diagonal
    ``1 + rho**2``, off-diagonals ``-rho``, all divided by ``1 - rho**2``.
    """
    if n < 1:
        raise ValueError(f"dimension must be at least 1, got {n}")
    if not 0 <= rho < 1:
        raise ValueError(f"rho must lie in [0, 1) for an invertible AR(1) matrix, got {rho}")
    if n == 1:
        return np.ones((1, 1))
    diag = np.full(n, 1.0 + rho**2)
    diag[0] = diag[-1] = 1.0
    off = np.full(n - 1, -rho)
    return (np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)) / (1.0 - rho**2)


def gamma_inverse_structured(lattice: Lattice, rho: float, *, sparse: bool = False):
    """``Omega_n^{-1} kron Omega_m^{-1}``, the exact inverse of the unit-a L1 correlation matrix.

    Because the lattice is labeled columnwise the column factor comes first
    in the Kronecker product. Distances are measured in lattice steps; a
    non-unit spacing is absorbed by using ``rho ** spacing`` per step.
    """
    step_rho = rho**lattice.spacing
    left = sp.csr_matrix(omega_inverse(lattice.n, step_rho))
    right = sp.csr_matrix(omega_inverse(lattice.m, step_rho))
    inv = sp.kron(left, right, format="csr")
    return inv if sparse else inv.toarray()


def build_gamma(lattice: Lattice, model: CorrelationModel, *, check: bool = True) -> CorrelationMatrix:
    """Dense correlation matrix for ``model`` on ``lattice``.

    The result is tagged :data:`KRONECKER` when ``a == 1`` and the metric is
    L1 (and ``rho < 1``). Otherwise positive definiteness is verified by a
    Cholesky factorization, which is cached for later solves.
    """
    d = lattice.distance_matrix(model.metric)
    gamma = model.a * _power(model.rho, d)
    np.fill_diagonal(gamma, 1.0)
    if model.is_structured and model.rho < 1:
        return CorrelationMatrix(gamma, KRONECKER, lattice=lattice, rho=model.rho)
    corr = CorrelationMatrix(gamma, DENSE, lattice=lattice, rho=model.rho)
    if check:
        corr.factorize()
    return corr


def solve_gamma(gamma: CorrelationMatrix, rhs: np.ndarray) -> np.ndarray:
    return gamma.solve(rhs)


@dataclass(frozen=True)
class CovarianceMatrix:
    """``V = Sigma^{1/2} Gamma Sigma^{1/2}`` with ``sigma_i = sqrt(theta_i (1 - theta_i))``."""

    gamma: CorrelationMatrix
    sigma: np.ndarray

    @property
    def V(self) -> np.ndarray:
        return self.sigma[:, None] * self.gamma.gamma * self.sigma[None, :]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``V^{-1} rhs`` computed as ``Sigma^{-1/2} Gamma^{-1} Sigma^{-1/2} rhs``."""
        rhs = np.asarray(rhs, dtype=float)
        scale = self.sigma if rhs.ndim == 1 else self.sigma[:, None]
        return self.gamma.solve(rhs / scale) / scale


def covariance_from_theta(gamma: CorrelationMatrix, theta: np.ndarray) -> CovarianceMatrix:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (gamma.size,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({gamma.size},)")
    if np.any((theta <= 0) | (theta >= 1)):
        raise ValueError("marginal probabilities must lie strictly inside (0, 1)")
    return CovarianceMatrix(gamma, np.sqrt(theta * (1.0 - theta)))


def covariance_sum_bound(n_sites: int, model: CorrelationModel) -> float:
    """Upper bound on the off-diagonal covariance sum for the L1 or L2 metric."""
    a, rho = model.a, model.rho
    if rho == 0:
        return 0.0
    if rho >= 1:
        raise ValueError("covariance-sum bound is degenerate at rho = 1")
    if model.metric == 1:
        return a * n_sites * (2 * rho - rho**2) / (1 - rho) ** 2
    if model.metric == 2:
        return a * n_sites * (2 * rho / (1 - rho) + (math.pi / 2) / math.log(rho) ** 2)
    raise ValueError(f"bound is only available for metrics 1 and 2, got {model.metric}")


def covariance_sum(lattice: Lattice, model: CorrelationModel, variance: float = 0.25) -> float:
    """``sum_{i != j} cov(Z_i, Z_j)`` with every site variance equal to ``variance``.

    Pairs are grouped by their row/column offset, which makes this linear in N.
    """
    m, n = lattice.m, lattice.n
    dr = np.arange(-(m - 1), m)
    dc = np.arange(-(n - 1), n)
    rr, cc = np.meshgrid(dr, dc, indexing="ij")
    counts = (m - np.abs(rr)) * (n - np.abs(cc))
    offsets = np.stack([np.abs(rr), np.abs(cc)], axis=-1).astype(float) * lattice.spacing
    if model.metric == 1:
        d = offsets.sum(-1)
    elif model.metric == 2:
        d = np.hypot(offsets[..., 0], offsets[..., 1])
    else:
        d = (offsets**model.metric).sum(-1) ** (1.0 / model.metric)
    corr = model.a * _power(model.rho, d)
    corr[m - 1, n - 1] = 0.0
    return float(variance * np.sum(counts * corr))


def check_covariance_sum_bound(lattice: Lattice, model: CorrelationModel) -> dict:
    if model.rho >= 1:
        raise ValueError("covariance-sum bound is degenerate at rho = 1")
    total = covariance_sum(lattice, model)
    bound = covariance_sum_bound(lattice.size, model)
    return {"sum": total, "bound": bound, "holds": total <= bound}


def inverse_ordering_gaps(lattice: Lattice, a: float, rho: float) -> dict:
    """Smallest entries of ``Gamma_1^{-1}/a - Gamma_a^{-1}`` and ``Gamma_a^{-1} - Gamma_1^{-1}`` (L1).

    Both are nonnegative exactly when the claimed entrywise ordering
    ``Gamma_1^{-1}/a >= Gamma_a^{-1} >= Gamma_1^{-1}`` holds.
    """
    inv_1 = gamma_inverse_structured(lattice, rho)
    inv_a = np.linalg.inv(build_gamma(lattice, CorrelationModel(a, rho, 1)).gamma)
    return {
        "upper_gap": float(np.min(inv_1 / a - inv_a)),
        "lower_gap": float(np.min(inv_a - inv_1)),
    }


def metric_ordering_gap(lattice: Lattice, a: float, rho: float) -> float:
    """Smallest entry of ``Gamma_a(rho; L2) - Gamma_a(rho; L1)``."""
    g2 = build_gamma(lattice, CorrelationModel(a, rho, 2), check=False).gamma
    g1 = build_gamma(lattice, CorrelationModel(a, rho, 1), check=False).gamma
    return float(np.min(g2 - g1))


def max_abs_inverse_entry(lattice: Lattice, model: CorrelationModel) -> float:
    return float(np.max(np.abs(build_gamma(lattice, model).inverse())))


def dump_matrix_csv(matrix: np.ndarray, path: str | Path) -> Path:
    """Write a matrix row-major with full round-trip precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(matrix):
            writer.writerow([repr(float(v)) for v in row])
    return path
