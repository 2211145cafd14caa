"""Dichotomized Gaussian binary fields and Monte Carlo checks of the asymptotics.

A binary field with logistic margins ``theta_i`` and pairwise correlations
``a * rho ** d_ij`` is produced by thresholding a latent Gaussian vector at
``z_i = Phi^{-1}(1 - theta_i)``. Each latent correlation is calibrated so
that the thresholded pair hits its target binary correlation.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.integrate
import scipy.stats
from scipy.special import ndtr, ndtri

from .correlation import CorrelationModel, NotPositiveDefiniteError, build_gamma, cholesky_or_raise
from .estimator import EstimationError, fit, information
from .glm import build_conditional_design, theta as logistic_theta
from .lattice import Lattice

log = logging.getLogger(__name__)

KS_CRITICAL_1PCT = 1.62762
WALD_5PCT = 3.841458820694124


class InfeasibleCorrelationError(ValueError):
    """A target binary correlation lies outside the attainable (Frechet) interval."""

    def __init__(self, target, interval):
        self.target = target
        self.interval = interval
        super().__init__(
            f"binary correlation {target:.6g} is not attainable; feasible interval is "
            f"[{interval[0]:.6g}, {interval[1]:.6g}]"
        )


def norm_sf(z):
    return ndtr(-np.asarray(z, dtype=float))


def norm_ppf(p):
    return ndtri(p)


def bvn_upper_orthant(z1: float, z2: float, r: float) -> float:
    """``P(W1 > z1, W2 > z2)`` for a standard bivariate normal with correlation ``r``.

    Uses the one-dimensional representation
    ``sf(z1) sf(z2) + (1 / 2pi) int_0^{asin r} exp(-(z1^2 + z2^2 - 2 z1 z2 sin t) / (2 cos^2 t)) dt``,
    whose integrand stays smooth as ``|r| -> 1``.
    """
    if not -1 < r < 1:
        raise ValueError(f"latent correlation must satisfy |r| < 1, got {r}")
    base = float(norm_sf(z1) * norm_sf(z2))
    if r == 0:
        return base
    s1 = z1 * z1 + z2 * z2
    s2 = z1 * z2

    def integrand(t):
        c = math.cos(t)
        return math.exp(-(s1 - 2.0 * s2 * math.sin(t)) / (2.0 * c * c))

    val, _ = scipy.integrate.quad(integrand, 0.0, math.asin(r), epsabs=1e-14, epsrel=1e-12, limit=200)
    return base + val / (2.0 * math.pi)


def frechet_bounds(theta_i: float, theta_j: float) -> tuple[float, float]:
    """Attainable correlation interval for Bernoulli variables with the given margins."""
    sd = math.sqrt(theta_i * (1 - theta_i) * theta_j * (1 - theta_j))
    p11_lo = max(0.0, theta_i + theta_j - 1.0)
    p11_hi = min(theta_i, theta_j)
    prod = theta_i * theta_j
    return (p11_lo - prod) / sd, (p11_hi - prod) / sd


def binary_correlation(theta_i: float, theta_j: float, r: float) -> float:
    """Correlation of the two indicators produced by thresholding a latent pair."""
    zi, zj = float(norm_ppf(1 - theta_i)), float(norm_ppf(1 - theta_j))
    sd = math.sqrt(theta_i * (1 - theta_i) * theta_j * (1 - theta_j))
    if r >= 1:
        p11 = min(theta_i, theta_j)
    elif r <= -1:
        p11 = max(0.0, theta_i + theta_j - 1.0)
    else:
        p11 = bvn_upper_orthant(zi, zj, r)
    return (p11 - theta_i * theta_j) / sd


def tetrachoric_latent_corr(theta_i: float, theta_j: float, target: float, tol: float = 1e-7) -> float:
    """Latent correlation whose dichotomized pair has correlation ``target``.

    The map from latent to binary correlation is increasing, so plain
    bisection on ``[-1, 1]`` finds it.
    """
    for t in (theta_i, theta_j):
        if not 0 < t < 1:
            raise ValueError(f"margins must lie in (0, 1), got {t}")
    lo_c, hi_c = frechet_bounds(theta_i, theta_j)
    slack = 1e-12
    if target > hi_c + slack or target < lo_c - slack:
        raise InfeasibleCorrelationError(target, (lo_c, hi_c))
    if target == 0:
        return 0.0
    if target >= hi_c - slack:
        return 1.0
    if target <= lo_c + slack:
        return -1.0
    lo, hi = (0.0, 1.0) if target > 0 else (-1.0, 0.0)
    r = 0.5 * (lo + hi)
    for _ in range(200):
        r = 0.5 * (lo + hi)
        c = binary_correlation(theta_i, theta_j, r)
        if abs(c - target) <= 0.01 * tol or hi - lo < 1e-15:
            break
        if c < target:
            lo = r
        else:
            hi = r
    return r


@dataclass(frozen=True)
class BinaryField:
    y: np.ndarray
    lattice: Lattice

    def __post_init__(self):
        if self.y.shape != (self.lattice.size,):
            raise ValueError(f"field has shape {self.y.shape}, lattice has {self.lattice.size} sites")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("field entries must be 0 or 1")

    def as_grid(self) -> np.ndarray:
        """``m x n`` array; column-major order matches the site labeling."""
        return self.y.reshape(self.lattice.n, self.lattice.m).T


@dataclass(frozen=True)
class SimulationConfig:
    """Everything needed to generate replicate fields.

    ``beta`` holds the true coefficients. With one coefficient the model is
    intercept-only; with two, ``x`` is the binary covariate field (drawn
    i.i.d. Bernoulli(1/2) from ``seed`` when omitted).
    """

    lattice: Lattice = field(default_factory=lambda: Lattice(16, 16))
    beta: tuple = (-0.34, -0.26)
    x: tuple | None = None
    correlation: CorrelationModel = field(default_factory=lambda: CorrelationModel(1.0, 0.4, 2))
    seed: int = 0
    replicates: int = 500
    shrinkage: bool = False

    @cached_property
    def covariate(self) -> np.ndarray | None:
        if len(self.beta) == 1:
            return None
        if len(self.beta) != 2:
            raise ValueError("simulation supports intercept-only or one binary covariate")
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            if x.shape != (self.lattice.size,):
                raise ValueError(f"covariate has {x.size} values, lattice has {self.lattice.size}")
            return x
        rng = np.random.default_rng([self.seed, 2**31 - 1])
        return rng.integers(0, 2, self.lattice.size).astype(float)

    @cached_property
    def design(self) -> np.ndarray:
        if self.covariate is None:
            return np.ones((self.lattice.size, 1))
        return build_conditional_design(self.covariate)

    @cached_property
    def theta(self) -> np.ndarray:
        return logistic_theta(self.design, np.asarray(self.beta, dtype=float))

    @cached_property
    def gamma(self):
        return build_gamma(self.lattice, self.correlation, check=False)

    def with_(self, **changes) -> "SimulationConfig":
        return replace(self, **changes)


def _map_pair_classes(config: SimulationConfig, func) -> np.ndarray:
    """Evaluate ``func(theta_a, theta_b, distance)`` once per distinct site-pair class.

    Off-diagonal entries are filled from the cached values; the diagonal is 1.
    """
    th = config.theta
    levels, cls = np.unique(th, return_inverse=True)
    d = config.lattice.distance_matrix(config.correlation.metric)
    dvals, dcode = np.unique(np.round(d, 10), return_inverse=True)
    dcode = dcode.reshape(d.shape)
    ci, cj = np.meshgrid(cls, cls, indexing="ij")
    lo, hi = np.minimum(ci, cj), np.maximum(ci, cj)
    key = (lo * len(levels) + hi) * len(dvals) + dcode
    ukeys, inverse = np.unique(key, return_inverse=True)
    values = np.ones(len(ukeys))
    for k, uk in enumerate(ukeys):
        pair, dc = divmod(int(uk), len(dvals))
        a_cls, b_cls = divmod(pair, len(levels))
        if dvals[dc] > 0:
            values[k] = func(levels[a_cls], levels[b_cls], dvals[dc])
    out = values[inverse].reshape(d.shape)
    np.fill_diagonal(out, 1.0)
    return out


def latent_correlation_matrix(config: SimulationConfig) -> np.ndarray:
    """Entrywise tetrachoric calibration of the target correlation matrix.

    Calibration runs once per distinct (margin pair, distance) combination.
    """
    target = config.correlation.correlation
    return _map_pair_classes(config, lambda ta, tb, d: tetrachoric_latent_corr(ta, tb, float(target(d))))


def shrink_to_pd(matrix: np.ndarray, floor: float = 1e-8) -> tuple[np.ndarray, float]:
    """``(1 - eps) R + eps I`` with the smallest ``eps`` lifting the spectrum above ``floor``."""
    lam = float(np.linalg.eigvalsh(matrix)[0])
    if lam >= floor:
        return matrix, 0.0
    eps = (floor - lam) / (1.0 - lam)
    n = matrix.shape[0]
    return (1 - eps) * matrix + eps * np.eye(n), eps


class FieldSimulator:
    """Calibrated generator; replicate ``i`` uses the seed pair ``(seed, i)``."""

    def __init__(self, config: SimulationConfig):
        self.config = config
        latent = latent_correlation_matrix(config)
        self.shrinkage_eps = 0.0
        try:
            self.factor = cholesky_or_raise(latent, "latent Gaussian correlation matrix")
        except NotPositiveDefiniteError:
            if not config.shrinkage:
                raise
            latent, self.shrinkage_eps = shrink_to_pd(latent)
            log.warning("latent correlation shrunk toward identity with eps=%.3g", self.shrinkage_eps)
            self.factor = cholesky_or_raise(latent, "shrunk latent correlation matrix")
        self.latent = latent
        self.thresholds = norm_ppf(1.0 - config.theta)

    def achieved_correlation(self) -> np.ndarray:
        """Binary correlation matrix the generator actually produces.

        Equals the target up to calibration tolerance unless shrinkage was
        applied, in which case every latent correlation is scaled by ``1 - eps``.
        """
        if self.shrinkage_eps == 0:
            return self.config.gamma.gamma.copy()
        scale = 1.0 - self.shrinkage_eps
        target = self.config.correlation.correlation
        return _map_pair_classes(
            self.config,
            lambda ta, tb, d: binary_correlation(ta, tb, scale * tetrachoric_latent_corr(ta, tb, float(target(d)))),
        )

    def field(self, replicate: int = 0) -> BinaryField:
        rng = np.random.default_rng([self.config.seed, replicate])
        w = self.factor @ rng.standard_normal(self.config.lattice.size)
        return BinaryField((w > self.thresholds).astype(np.int8), self.config.lattice)

    def fields(self, replicates: int | None = None) -> np.ndarray:
        reps = self.config.replicates if replicates is None else replicates
        return np.stack([self.field(i).y for i in range(reps)])


def simulate_field(config: SimulationConfig, replicate: int = 0) -> BinaryField:
    return FieldSimulator(config).field(replicate)


@dataclass(frozen=True)
class JointPmf:
    """Joint distribution of ``k`` binary variables as an array of shape ``(2,) * k``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (2,) * p.ndim:
            raise ValueError("pmf array must have shape (2, 2, ..., 2)")
        if p.ndim > 12:
            raise ValueError(f"at most 12 variables supported, got {p.ndim}")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("pmf must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def k(self) -> int:
        return self.probs.ndim

    def marginal(self, i: int) -> float:
        axes = tuple(j for j in range(self.k) if j != i)
        return float(self.probs.sum(axis=axes)[1])

    @classmethod
    def random(cls, k: int, rng: np.random.Generator) -> "JointPmf":
        p = rng.dirichlet(np.ones(2**k)).reshape((2,) * k)
        return cls(p / p.sum())


def moment_oracle(pmf: JointPmf, powers) -> float:
    """Exact ``E[prod Z_i^{p_i}]`` with ``Z_i = Y_i - theta_i`` by enumerating all outcomes."""
    powers = tuple(int(p) for p in powers)
    if len(powers) != pmf.k:
        raise ValueError(f"need {pmf.k} exponents, got {len(powers)}")
    thetas = [pmf.marginal(i) for i in range(pmf.k)]
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=pmf.k):
        term = pmf.probs[outcome]
        for yi, ti, pi in zip(outcome, thetas, powers):
            term *= (yi - ti) ** pi
        total += term
    return float(total)


def binary_moment_identity(pmf: JointPmf, powers) -> tuple[float, float]:
    """Both sides of ``E[Z1^2 R] = Var(Z1) E[R] + (1 - 2 theta_1) E[Z1 R]``, ``R = prod_{i>1} Z_i^{p_i}``.

    ``powers`` gives the exponents of variables ``2..k``.
    """
    rest = tuple(powers)
    t1 = pmf.marginal(0)
    lhs = moment_oracle(pmf, (2,) + rest)
    rhs = t1 * (1 - t1) * moment_oracle(pmf, (0,) + rest) + (1 - 2 * t1) * moment_oracle(pmf, (1,) + rest)
    return lhs, rhs


def ks_critical_value(n: int) -> float:
    """Asymptotic 1% Kolmogorov-Smirnov critical value for sample size ``n``."""
    return KS_CRITICAL_1PCT / math.sqrt(n)


@dataclass
class NormalityResult:
    ks_statistic: float
    critical_value: float
    passed: bool
    standardized: np.ndarray = field(repr=False)


def mc_normality_check(config: SimulationConfig, a_vector=None, *, strict: bool = True) -> NormalityResult:
    """KS distance between standardized ``a'(Y - theta)`` and the standard normal.

    Each replicate contributes ``a'(Y - theta) / sqrt(a' V a)`` where ``V``
    is the covariance ``Sigma^{1/2} Gamma Sigma^{1/2}`` of the generated
    field (the target unless the latent matrix had to be shrunk).
    """
    if strict and config.replicates < 1000:
        raise ValueError(f"normality check needs at least 1000 replicates, got {config.replicates}")
    N = config.lattice.size
    a = np.ones(N) if a_vector is None else np.asarray(a_vector, dtype=float)
    th = config.theta
    sim = FieldSimulator(config)
    sigma = np.sqrt(th * (1 - th))
    V = sigma[:, None] * sim.achieved_correlation() * sigma[None, :]
    var = float(a @ V @ a)
    if var <= 1e-14:
        raise ValueError("weight vector gives a degenerate (zero-variance) linear combination")
    sims = sim.fields()
    z = (sims - th) @ a / math.sqrt(var)
    d = float(scipy.stats.kstest(z, "norm").statistic)
    crit = ks_critical_value(len(z))
    return NormalityResult(d, crit, d < crit, z)


@dataclass
class CoverageResult:
    beta0: np.ndarray
    nominal: float
    coverage: np.ndarray
    mean_beta: np.ndarray
    mc_se: np.ndarray
    rejection_rate: float | None
    n_fits: int
    n_failed: int
    empirical_cov: np.ndarray
    model_cov: np.ndarray
    records: list = field(default_factory=list, repr=False)

    @property
    def bias_in_se(self) -> np.ndarray:
        return (self.mean_beta - self.beta0) / self.mc_se


def mc_coverage(config: SimulationConfig, nominal: float = 0.95, *, strict: bool = True) -> CoverageResult:
    """Wald-interval coverage of the quasi-likelihood fit over replicate fields.

    Each replicate is fitted with the generating correlation. Failed fits
    are counted and excluded. When the covariate coefficient is zero the
    Wald rejection rate at the 5% level is reported as well.
    """
    if strict and config.replicates < 500:
        raise ValueError(f"coverage study needs at least 500 replicates, got {config.replicates}")
    beta0 = np.asarray(config.beta, dtype=float)
    T = config.design
    gamma = build_gamma(config.lattice, config.correlation)
    sim = FieldSimulator(config)
    zcrit = float(norm_ppf(0.5 + nominal / 2))
    records = []
    estimates, covered, rejected = [], [], []
    failed = 0
    for i in range(config.replicates):
        y = sim.field(i).y
        try:
            res = fit(T, y, gamma)
        except EstimationError as exc:
            failed += 1
            records.append({"replicate": i, "converged": False, "error": type(exc).__name__})
            continue
        se = res.std_errors
        hit = np.abs(res.beta_hat - beta0) <= zcrit * se
        estimates.append(res.beta_hat)
        covered.append(hit)
        if len(beta0) > 1:
            rejected.append(res.beta_hat[1] ** 2 / res.cov_hat[1, 1] > WALD_5PCT)
        rec = {"replicate": i, "converged": True, "error": ""}
        for j, (b, s, h) in enumerate(zip(res.beta_hat, se, hit)):
            rec[f"beta{j}_hat"] = float(b)
            rec[f"se{j}"] = float(s)
            rec[f"covered{j}"] = bool(h)
        records.append(rec)
    if not estimates:
        raise EstimationError("every replicate fit failed")
    est = np.array(estimates)
    n = len(est)
    emp_cov = np.atleast_2d(np.cov(est, rowvar=False))
    model_cov = np.linalg.inv(information(T, beta0, gamma))
    rejection = None
    if len(beta0) > 1 and beta0[1] == 0:
        rejection = float(np.mean(rejected))
    return CoverageResult(
        beta0=beta0,
        nominal=nominal,
        coverage=np.mean(covered, axis=0),
        mean_beta=est.mean(axis=0),
        mc_se=est.std(axis=0, ddof=1) / math.sqrt(n),
        rejection_rate=rejection,
        n_fits=n,
        n_failed=failed,
        empirical_cov=emp_cov,
        model_cov=model_cov,
        records=records,
    )
