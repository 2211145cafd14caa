"""Quasi-likelihood estimating equations for spatially correlated binary lattice data."""

from .correlation import (
    CorrelationMatrix,
    CorrelationModel,
    CovarianceMatrix,
    NotPositiveDefiniteError,
    build_gamma,
    check_covariance_sum_bound,
    covariance_from_theta,
    gamma_inverse_structured,
    omega_inverse,
    solve_gamma,
)
from .estimator import (
    DivergenceError,
    EstimationError,
    FitResult,
    NonConvergenceError,
    SeparationError,
    SingularInformationError,
    chisq1_tail,
    fit,
    information,
    quasi_score,
    wald_test,
)
from .glm import build_conditional_design, derivative_matrix, theta
from .lattice import Lattice
from .simulate import (
    BinaryField,
    InfeasibleCorrelationError,
    JointPmf,
    SimulationConfig,
    bvn_upper_orthant,
    mc_coverage,
    mc_normality_check,
    moment_oracle,
    simulate_field,
    tetrachoric_latent_corr,
)
from .variogram import correlation_from_fit, empirical_semivariogram, fit_exponential

__version__ = "0.1.0"
