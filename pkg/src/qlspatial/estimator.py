"""Quasi-likelihood estimation for spatially correlated binary responses.

The quasi-score is ``U(beta) = P' V^{-1} (y - theta(beta))`` and the
quasi-information ``I(beta) = P' V^{-1} P`` with
``V = Sigma^{1/2} Gamma Sigma^{1/2}``. ``V^{-1}`` is never formed; every
product goes through :meth:`CorrelationMatrix.solve` with diagonal scaling.
The dispersion constant is fixed at one since it does not move the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import erfc

from .correlation import CorrelationMatrix, covariance_from_theta
from .glm import check_design, derivative_matrix, theta as logistic_theta

DIVERGENCE_NORM = 1e3


class EstimationError(RuntimeError):
    """Base class for fitting failures; carries the iteration trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class DivergenceError(EstimationError):
    pass


class SeparationError(DivergenceError):
    """No finite root exists because a covariate class has a constant response."""


class NonConvergenceError(EstimationError):
    pass


class SingularInformationError(EstimationError):
    pass


@dataclass
class TraceStep:
    iteration: int
    beta: np.ndarray
    score_norm: float


@dataclass
class FitResult:
    beta_hat: np.ndarray
    cov_hat: np.ndarray
    iterations: int
    converged: bool
    trace: list[TraceStep] = field(default_factory=list)
    score: np.ndarray | None = None

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_hat))


def _residual_parts(T, beta, gamma):
    th = logistic_theta(T, beta)
    cov = covariance_from_theta(gamma, th)
    P = derivative_matrix(T, th)
    return th, cov, P


def quasi_score(T, beta, y, gamma: CorrelationMatrix) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    th, cov, P = _residual_parts(T, beta, gamma)
    return P.T @ cov.solve(np.asarray(y, dtype=float) - th)


def information(T, beta, gamma: CorrelationMatrix) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    _, cov, P = _residual_parts(T, beta, gamma)
    info = P.T @ cov.solve(P)
    return 0.5 * (info + info.T)


def _score_and_information(T, beta, y, gamma):
    th, cov, P = _residual_parts(T, beta, gamma)
    # one solve for both products
    sol = cov.solve(np.column_stack([y - th, P]))
    score = P.T @ sol[:, 0]
    info = P.T @ sol[:, 1:]
    return score, 0.5 * (info + info.T)


def check_separation(T, y) -> None:
    """Reject responses for which the estimating equation has no finite root.

    A constant response always separates. For designs with one binary
    covariate the model is saturated, so a constant response inside either
    covariate class separates as well. Other designs rely on divergence
    detection during the iteration.
    """
    y = np.asarray(y)
    if np.all(y == y[0]):
        raise SeparationError(f"response is constant (all {int(y[0])}); no finite estimate exists")
    if T.shape[1] == 2:
        for level in (0, 1):
            cls = y[T[:, 1] == level]
            if cls.size and np.all(cls == cls[0]):
                raise SeparationError(
                    f"response is constant ({int(cls[0])}) for every site with covariate {level}; "
                    "no finite estimate exists"
                )


def fit(
    T,
    y,
    gamma: CorrelationMatrix,
    beta_init=None,
    tol: float = 1e-8,
    max_iter: int = 50,
    damping: bool = False,
) -> FitResult:
    """Solve ``U(beta) = 0`` by Newton-Raphson, ``beta += I(beta)^{-1} U(beta)``.

    Stops once ``max|U| <= tol``. Without ``damping`` the step is never
    shortened; with it the step is halved while ``max|U|`` increases.
    When ``beta_init`` is None the iteration starts from the ordinary
    (independence) logistic fit, falling back to zeros.

    Raises
    ------
    SeparationError
        A constant response leaves no finite root.
    DivergenceError
        ``||beta||`` exceeded 1e3 or the marginals hit 0 or 1.
    SingularInformationError
        ``I(beta)`` could not be factorized.
    NonConvergenceError
        ``max_iter`` steps without meeting ``tol``.
    """
    T = check_design(T)
    y = np.asarray(y, dtype=float)
    if y.shape != (T.shape[0],):
        raise ValueError(f"response has shape {y.shape}, expected ({T.shape[0]},)")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("responses must be 0 or 1")
    check_separation(T, y)

    if beta_init is None:
        beta_init = _independence_start(T, y, gamma, tol, max_iter)
    beta = np.array(beta_init, dtype=float)
    if beta.shape != (T.shape[1],):
        raise ValueError(f"beta_init has shape {beta.shape}, expected ({T.shape[1]},)")

    trace: list[TraceStep] = []
    for it in range(max_iter + 1):
        score, info = _evaluate(T, beta, y, gamma, trace)
        norm = float(np.max(np.abs(score)))
        trace.append(TraceStep(it, beta.copy(), norm))
        if norm <= tol:
            cov = scipy.linalg.cho_solve(_cholesky_info(info, trace), np.eye(info.shape[0]))
            return FitResult(beta, 0.5 * (cov + cov.T), it, True, trace, score)
        if it == max_iter:
            break
        step = scipy.linalg.cho_solve(_cholesky_info(info, trace), score)
        if damping:
            step = _halve_until_decrease(T, beta, y, gamma, step, norm, trace)
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.linalg.norm(beta) > DIVERGENCE_NORM:
            raise DivergenceError(
                f"iteration diverged at step {it + 1}: ||beta|| = {np.linalg.norm(beta):.3g}", trace
            )
    raise NonConvergenceError(
        f"no convergence after {max_iter} iterations (max|U| = {trace[-1].score_norm:.3g})", trace
    )


def _evaluate(T, beta, y, gamma, trace):
    th = logistic_theta(T, beta)
    if np.any((th <= 0) | (th >= 1)):
        raise DivergenceError("marginal probabilities reached 0 or 1", trace)
    return _score_and_information(T, beta, y, gamma)


def _cholesky_info(info, trace):
    try:
        return scipy.linalg.cho_factor(info, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError(f"quasi-information is singular: {exc}", trace) from exc


def _halve_until_decrease(T, beta, y, gamma, step, norm, trace, max_halvings=30):
    for _ in range(max_halvings):
        trial = beta + step
        th = logistic_theta(T, trial)
        if np.all((th > 0) & (th < 1)):
            trial_norm = np.max(np.abs(quasi_score(T, trial, y, gamma)))
            if trial_norm <= norm:
                return step
        step = step / 2
    return step


def _independence_start(T, y, gamma, tol, max_iter):
    zeros = np.zeros(T.shape[1])
    if gamma.structure == "dense" and np.array_equal(gamma.gamma, np.eye(gamma.size)):
        return zeros
    try:
        return fit(T, y, CorrelationMatrix.identity(T.shape[0]), zeros, tol, max_iter).beta_hat
    except EstimationError:
        return zeros


def chisq1_tail(x: float) -> float:
    """Upper tail ``P(chi2_1 > x) = erfc(sqrt(x / 2))``."""
    if x < 0:
        raise ValueError(f"chi-squared statistic must be nonnegative, got {x}")
    return float(erfc(math.sqrt(x / 2.0)))


@dataclass(frozen=True)
class WaldTest:
    coefficient: int
    estimate: float
    variance: float
    statistic: float
    df: int
    p_value: float


def wald_test(result: FitResult, j: int) -> WaldTest:
    """Wald chi-squared test of ``beta_j = 0`` using the model-based covariance."""
    if not result.converged:
        raise ValueError("Wald test requires a converged fit")
    est = float(result.beta_hat[j])
    var = float(result.cov_hat[j, j])
    stat = est**2 / var
    return WaldTest(j, est, var, stat, 1, chisq1_tail(stat))


def format_fit_text(result: FitResult, names=None, test: WaldTest | None = None) -> str:
    names = names or [f"beta{i}" for i in range(len(result.beta_hat))]
    lines = [
        "Quasi-likelihood fit",
        f"  converged: {result.converged} after {result.iterations} iterations",
        "",
        f"  {'coef':<12}{'estimate':>12}{'std.err':>12}",
    ]
    for name, b, se in zip(names, result.beta_hat, result.std_errors):
        lines.append(f"  {name:<12}{b:>12.4f}{se:>12.4f}")
    lines += ["", "  covariance:"]
    for i, name in enumerate(names):
        row = " ".join(f"{v:>10.4f}" for v in result.cov_hat[i])
        lines.append(f"  {name:<12}{row}")
    if test is not None:
        lines += [
            "",
            f"  Wald test {names[test.coefficient]} = 0: statistic {test.statistic:.2f} "
            f"(df {test.df}), p-value {test.p_value:.4g}",
        ]
    lines += ["", "  iteration trace:"]
    for step in result.trace:
        beta = " ".join(f"{v: .6f}" for v in step.beta)
        lines.append(f"    {step.iteration:>3}  beta=[{beta}]  max|U|={step.score_norm:.3e}")
    return "\n".join(lines) + "\n"


def format_fit_kv(result: FitResult, names=None, test: WaldTest | None = None) -> str:
    names = names or [f"beta{i}" for i in range(len(result.beta_hat))]
    out = [f"converged={str(result.converged).lower()}", f"iterations={result.iterations}"]
    for name, b in zip(names, result.beta_hat):
        out.append(f"{name}={float(b)!r}")
    for i, ni in enumerate(names):
        for j, nj in enumerate(names):
            if j >= i:
                key = f"var_{ni}" if i == j else f"cov_{ni}_{nj}"
                out.append(f"{key}={float(result.cov_hat[i, j])!r}")
    if test is not None:
        out += [
            f"wald_coefficient={names[test.coefficient]}",
            f"wald_statistic={float(test.statistic)!r}",
            f"wald_df={test.df}",
            f"wald_p_value={float(test.p_value)!r}",
        ]
    for step in result.trace:
        beta = ",".join(repr(float(v)) for v in step.beta)
        out.append(f"trace_{step.iteration}={beta};{float(step.score_norm)!r}")
    return "\n".join(out) + "\n"
